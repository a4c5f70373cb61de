//! Dataset ingestion, synthetic data, augmentation, and episodic sampling.

mod augment;
mod sampler;
mod scan;
mod synth;

pub use augment::{augment, flip_horizontal, AugmentSpec};
pub use sampler::{sample_episode, triplet_batches, Triplet, TripletBatch};
pub use scan::{scan_dataset, write_dataset, DatasetManifest, ScanReport};
pub use synth::{class_quadrant, in_quadrant, nearest_centroid_accuracy, synth_generate, SynthConfig};

use crate::error::{CoreError, Result};
use crate::rng::Fnv1a;
use crate::tensor::{Scalar, Tensor};

pub const MAX_PER_CLASS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CoreError::Config(format!("unknown split '{other}'"))),
        }
    }

    fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

/// One image with its label and split assignment. Pixels are [3,H,W] in
/// [0,1]; cloning is cheap (the buffer is shared).
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub id: String,
    pub pixels: Tensor<f32>,
    pub class_label: String,
    pub split: Split,
}

/// An in-memory dataset: ordered classes, per-class per-split sample lists.
#[derive(Debug)]
pub struct FewShotDataset {
    classes: Vec<String>,
    /// samples[class][split]
    samples: Vec<[Vec<ImageSample>; 3]>,
    image_size: usize,
    manifest_hash: u64,
}

impl FewShotDataset {
    /// Validates the structural invariants and computes the content hash.
    pub fn new(
        classes: Vec<String>,
        samples: Vec<[Vec<ImageSample>; 3]>,
        image_size: usize,
    ) -> Result<Self> {
        if classes.len() != samples.len() {
            return Err(CoreError::Layout(format!(
                "{} classes but {} sample groups",
                classes.len(),
                samples.len()
            )));
        }
        for (class, per_split) in classes.iter().zip(&samples) {
            for split in Split::ALL {
                let list = &per_split[split.index()];
                if list.is_empty() {
                    return Err(CoreError::Layout(format!(
                        "class '{class}' has no samples in split '{}'",
                        split.as_str()
                    )));
                }
                let mut ids: Vec<&str> = list.iter().map(|s| s.id.as_str()).collect();
                ids.sort_unstable();
                ids.dedup();
                if ids.len() != list.len() {
                    return Err(CoreError::Layout(format!(
                        "duplicate sample ids in class '{class}', split '{}'",
                        split.as_str()
                    )));
                }
                for s in list {
                    let shape = s.pixels.shape();
                    if shape != [3, image_size, image_size] {
                        return Err(CoreError::Layout(format!(
                            "sample '{}' has shape {:?}, expected [3,{image_size},{image_size}]",
                            s.id, shape
                        )));
                    }
                }
            }
        }
        let mut hasher = Fnv1a::new();
        hasher.update(&(image_size as u64).to_le_bytes());
        for (class, per_split) in classes.iter().zip(&samples) {
            hasher.update(class.as_bytes());
            for split in Split::ALL {
                hasher.update(split.as_str().as_bytes());
                for s in &per_split[split.index()] {
                    hasher.update(s.id.as_bytes());
                    for &v in s.pixels.data() {
                        hasher.update(&v.to_le_bytes());
                    }
                }
            }
        }
        Ok(FewShotDataset { classes, samples, image_size, manifest_hash: hasher.finish() })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn manifest_hash(&self) -> u64 {
        self.manifest_hash
    }

    pub fn samples(&self, class: usize, split: Split) -> &[ImageSample] {
        &self.samples[class][split.index()]
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.samples.iter().map(|s| s[split.index()].len()).sum()
    }
}

/// An N-way K-shot Q-query task. Support and query lists are class-major:
/// entry `c * k + j` belongs to local class `c`.
#[derive(Debug, Clone)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub support: Vec<(ImageSample, usize)>,
    pub query: Vec<(ImageSample, usize)>,
    /// Local class index -> dataset class name.
    pub class_map: Vec<String>,
}

impl Episode {
    /// Stack into preprocessed tensors ready for an encoder.
    pub fn to_batch<S: Scalar>(&self) -> EpisodeBatch<S> {
        let size = self.support[0].0.pixels.shape()[1];
        let stack = |items: &[(ImageSample, usize)]| {
            let mut data = Vec::with_capacity(items.len() * 3 * size * size);
            for (sample, _) in items {
                data.extend(preprocess::<S>(sample, size).data().iter().copied());
            }
            Tensor::from_vec(&[items.len(), 3, size, size], data)
        };
        EpisodeBatch {
            n_way: self.n_way,
            k_shot: self.k_shot,
            q_query: self.q_query,
            support: stack(&self.support),
            query: stack(&self.query),
            query_labels: self.query.iter().map(|(_, c)| *c).collect(),
            class_map: self.class_map.clone(),
        }
    }
}

/// Preprocessed episode tensors, class-major along dim 0.
#[derive(Debug, Clone)]
pub struct EpisodeBatch<S: Scalar> {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub support: Tensor<S>,
    pub query: Tensor<S>,
    pub query_labels: Vec<usize>,
    pub class_map: Vec<String>,
}

/// Resize + standardize a sample to `[3,size,size]` with mean 0.5, std 0.5.
pub fn preprocess<S: Scalar>(sample: &ImageSample, size: usize) -> Tensor<S> {
    let pixels = if sample.pixels.shape() == [3, size, size] {
        sample.pixels.clone()
    } else {
        resize_bilinear(&sample.pixels, size, size)
    };
    Tensor::from_vec(
        &[3, size, size],
        pixels
            .data()
            .iter()
            .map(|&v| S::from_f64(((v - 0.5) / 0.5) as f64))
            .collect(),
    )
}

/// Bilinear resize of a [3,H,W] image, clamp-to-edge sampling. Same-size
/// input is returned as an exact copy.
pub(crate) fn resize_bilinear(pixels: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let shape = pixels.shape();
    let (ch, h, w) = (shape[0], shape[1], shape[2]);
    if h == out_h && w == out_w {
        return pixels.clone();
    }
    let mut out = vec![0.0f32; ch * out_h * out_w];
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for c in 0..ch {
        let plane = &pixels.data()[c * h * w..][..h * w];
        for oy in 0..out_h {
            // Align pixel centers.
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = (fy - y0 as f64) as f32;
            for ox in 0..out_w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = (fx - x0 as f64) as f32;
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                out[(c * out_h + oy) * out_w + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Tensor::from_vec(&[ch, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, value: f32, size: usize) -> ImageSample {
        ImageSample {
            id: id.to_string(),
            pixels: Tensor::full(&[3, size, size], value),
            class_label: "a".to_string(),
            split: Split::Train,
        }
    }

    #[test]
    fn preprocess_standardizes_half_gray_to_zero() {
        let s = sample("x", 0.5, 4);
        let t: Tensor<f64> = preprocess(&s, 4);
        assert!(t.data().iter().all(|&v| v.abs() < 1e-7));
        assert_eq!(t.shape(), &[3, 4, 4]);
    }

    #[test]
    fn preprocess_resizes_when_needed() {
        let s = sample("x", 1.0, 8);
        let t: Tensor<f32> = preprocess(&s, 4);
        assert_eq!(t.shape(), &[3, 4, 4]);
        assert!(t.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn dataset_rejects_empty_split() {
        let classes = vec!["a".to_string()];
        let samples = vec![[vec![sample("1", 0.1, 4)], vec![], vec![sample("2", 0.1, 4)]]];
        assert!(matches!(
            FewShotDataset::new(classes, samples, 4),
            Err(CoreError::Layout(_))
        ));
    }

    #[test]
    fn dataset_hash_is_content_stable() {
        let build = || {
            FewShotDataset::new(
                vec!["a".to_string()],
                vec![[
                    vec![sample("1", 0.1, 4)],
                    vec![sample("2", 0.2, 4)],
                    vec![sample("3", 0.3, 4)],
                ]],
                4,
            )
            .unwrap()
        };
        assert_eq!(build().manifest_hash(), build().manifest_hash());
    }
}
