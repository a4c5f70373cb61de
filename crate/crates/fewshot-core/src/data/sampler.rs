//! Episodic N-way K-shot sampling and triplet stream construction.

use crate::data::{Episode, FewShotDataset, ImageSample, Split};
use crate::error::{CoreError, Result};
use crate::rng::Pcg32;
use crate::tensor::{Scalar, Tensor};

/// Draw one episode without replacement. Classes and samples come from the
/// caller's RNG stream, so concurrent samplers need independent streams.
pub fn sample_episode(
    dataset: &FewShotDataset,
    split: Split,
    n_way: usize,
    k_shot: usize,
    q_query: usize,
    rng: &mut Pcg32,
) -> Result<Episode> {
    if n_way < 2 {
        return Err(CoreError::Config(format!("n_way must be >= 2, got {n_way}")));
    }
    if k_shot < 1 || q_query < 1 {
        return Err(CoreError::Config("k_shot and q_query must be >= 1".into()));
    }
    let n_classes = dataset.classes().len();
    if n_way > n_classes {
        return Err(CoreError::Capacity(format!(
            "episode wants {n_way} classes but the dataset has {n_classes}"
        )));
    }
    let picked = rng.choose_distinct(n_classes, n_way);
    let need = k_shot + q_query;
    for &class in &picked {
        let have = dataset.samples(class, split).len();
        if have < need {
            return Err(CoreError::Capacity(format!(
                "class '{}' has {have} samples in split '{}', episode needs {need} (short by {})",
                dataset.classes()[class],
                split.as_str(),
                need - have
            )));
        }
    }

    let mut support = Vec::with_capacity(n_way * k_shot);
    let mut query = Vec::with_capacity(n_way * q_query);
    for (local, &class) in picked.iter().enumerate() {
        let pool = dataset.samples(class, split);
        let chosen = rng.choose_distinct(pool.len(), need);
        for &i in &chosen[..k_shot] {
            support.push((pool[i].clone(), local));
        }
        for &i in &chosen[k_shot..] {
            query.push((pool[i].clone(), local));
        }
    }
    Ok(Episode {
        n_way,
        k_shot,
        q_query,
        support,
        query,
        class_map: picked.iter().map(|&c| dataset.classes()[c].clone()).collect(),
    })
}

/// One anchor-positive-negative triple.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub anchor: ImageSample,
    pub positive: ImageSample,
    pub negative: ImageSample,
}

impl Triplet {
    /// Stack a batch of triplets into three preprocessed [B,3,s,s] tensors.
    pub fn to_batch<S: Scalar>(triplets: &[Triplet]) -> TripletBatch<S> {
        let size = triplets[0].anchor.pixels.shape()[1];
        let stack = |pick: fn(&Triplet) -> &ImageSample| {
            let mut data = Vec::with_capacity(triplets.len() * 3 * size * size);
            for t in triplets {
                data.extend(crate::data::preprocess::<S>(pick(t), size).data().iter().copied());
            }
            Tensor::from_vec(&[triplets.len(), 3, size, size], data)
        };
        TripletBatch {
            anchors: stack(|t| &t.anchor),
            positives: stack(|t| &t.positive),
            negatives: stack(|t| &t.negative),
        }
    }
}

/// Preprocessed triplet tensors.
#[derive(Debug, Clone)]
pub struct TripletBatch<S: Scalar> {
    pub anchors: Tensor<S>,
    pub positives: Tensor<S>,
    pub negatives: Tensor<S>,
}

/// Build one epoch of triplet batches: every eligible sample anchors exactly
/// once (shuffled), positives share the anchor's class under a different id,
/// negatives come from a different class. Only full batches are emitted.
pub fn triplet_batches(
    dataset: &FewShotDataset,
    split: Split,
    batch_size: usize,
    rng: &mut Pcg32,
) -> Result<Vec<Vec<Triplet>>> {
    let n_classes = dataset.classes().len();
    if n_classes < 2 {
        return Err(CoreError::Capacity(format!(
            "triplet sampling needs >= 2 classes, split '{}' has {n_classes}",
            split.as_str()
        )));
    }
    if batch_size == 0 {
        return Err(CoreError::Config("batch_size must be >= 1".into()));
    }

    // Anchors: all samples of classes holding at least two samples.
    let mut anchors: Vec<(usize, usize)> = Vec::new();
    for class in 0..n_classes {
        let n = dataset.samples(class, split).len();
        if n >= 2 {
            anchors.extend((0..n).map(|i| (class, i)));
        }
    }
    if anchors.len() < batch_size {
        return Err(CoreError::Capacity(format!(
            "split '{}' yields {} eligible anchors, need at least {batch_size} for one batch",
            split.as_str(),
            anchors.len()
        )));
    }
    rng.shuffle(&mut anchors);

    // Class sizes for negative sampling without materializing the pool.
    let sizes: Vec<usize> = (0..n_classes).map(|c| dataset.samples(c, split).len()).collect();
    let total: usize = sizes.iter().sum();

    let n_batches = anchors.len() / batch_size;
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut batch = Vec::with_capacity(batch_size);
        for &(class, idx) in &anchors[b * batch_size..(b + 1) * batch_size] {
            let pool = dataset.samples(class, split);
            let pos_idx = {
                let j = rng.below(pool.len() - 1);
                if j >= idx {
                    j + 1
                } else {
                    j
                }
            };
            // Negative: uniform over all samples outside the anchor's class.
            let mut flat = rng.below(total - sizes[class]);
            let mut neg = None;
            for (c, &len) in sizes.iter().enumerate() {
                if c == class {
                    continue;
                }
                if flat < len {
                    neg = Some(dataset.samples(c, split)[flat].clone());
                    break;
                }
                flat -= len;
            }
            batch.push(Triplet {
                anchor: pool[idx].clone(),
                positive: pool[pos_idx].clone(),
                negative: neg.expect("negative pool is non-empty"),
            });
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};

    fn tiny_dataset() -> FewShotDataset {
        synth_generate(&SynthConfig {
            n_classes: 4,
            per_class: 20,
            image_size: 8,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn episode_counts_match_spec_defaults() {
        let ds = tiny_dataset();
        let mut rng = Pcg32::new(1, 1);
        let ep = sample_episode(&ds, Split::Train, 4, 2, 3, &mut rng).unwrap();
        assert_eq!(ep.support.len(), 8);
        assert_eq!(ep.query.len(), 12);
        assert_eq!(ep.class_map.len(), 4);
        // Disjoint ids between support and query.
        for (s, _) in &ep.support {
            assert!(ep.query.iter().all(|(q, _)| q.id != s.id));
        }
    }

    #[test]
    fn minimal_episode_two_way_one_shot() {
        let ds = tiny_dataset();
        let mut rng = Pcg32::new(2, 1);
        let ep = sample_episode(&ds, Split::Val, 2, 1, 1, &mut rng).unwrap();
        assert_eq!(ep.support.len(), 2);
        assert_eq!(ep.query.len(), 2);
        let ids: Vec<&str> = ep
            .support
            .iter()
            .chain(&ep.query)
            .map(|(s, _)| s.id.as_str())
            .collect();
        let mut dedup = ids.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), ids.len());
    }

    #[test]
    fn capacity_error_names_class_and_shortfall() {
        let ds = tiny_dataset();
        let mut rng = Pcg32::new(3, 1);
        // Val split has 3 per class (20 -> 14/3/3); ask for more.
        let err = sample_episode(&ds, Split::Val, 4, 3, 3, &mut rng).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("short by"), "{msg}");
    }

    #[test]
    fn episodes_never_cross_splits() {
        let ds = tiny_dataset();
        let mut rng = Pcg32::new(4, 1);
        let ep = sample_episode(&ds, Split::Val, 3, 1, 2, &mut rng).unwrap();
        for (s, _) in ep.support.iter().chain(&ep.query) {
            assert_eq!(s.split, Split::Val);
        }
    }

    #[test]
    fn triplet_constraints_hold() {
        let ds = tiny_dataset();
        let mut rng = Pcg32::new(5, 1);
        let batches = triplet_batches(&ds, Split::Train, 8, &mut rng).unwrap();
        assert!(!batches.is_empty());
        for batch in &batches {
            assert_eq!(batch.len(), 8);
            for t in batch {
                assert_eq!(t.anchor.class_label, t.positive.class_label);
                assert_ne!(t.anchor.id, t.positive.id);
                assert_ne!(t.anchor.class_label, t.negative.class_label);
            }
        }
    }

    #[test]
    fn triplet_stream_is_seed_deterministic() {
        let ds = tiny_dataset();
        let collect = |seed| {
            let mut rng = Pcg32::new(seed, 1);
            triplet_batches(&ds, Split::Train, 4, &mut rng)
                .unwrap()
                .iter()
                .flatten()
                .map(|t| (t.anchor.id.clone(), t.positive.id.clone(), t.negative.id.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(collect(7), collect(7));
        assert_ne!(collect(7), collect(8));
    }
}
