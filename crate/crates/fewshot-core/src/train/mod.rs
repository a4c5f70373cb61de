//! Training loops, early stopping, and evaluation.

pub mod checkpoint;
pub mod metrics;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, EpisodeGeometry, TensorEntry,
};
pub use metrics::{ConfusionMatrix, MetricsReport, PerClassMetrics};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{sample_episode, triplet_batches, Episode, FewShotDataset, Split, Triplet};
use crate::error::{CoreError, Result};
use crate::graph::Graph;
use crate::models::{FewShotModel, Head};
use crate::ops::Mode;
use crate::optim::Adam;
use crate::rng::Pcg32;
use crate::tensor::Scalar;

/// Hyperparameters for one training run. Each head carries its own
/// standard training protocol; see [`TrainConfig::defaults`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub head: Head,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub lr: f64,
    /// Hard cap on training episodes (episodic heads). When absent it is
    /// derived as `max_epochs * eval_interval`.
    pub max_episodes: Option<u64>,
    /// Epoch cap: triplet epochs for the siamese head, validation rounds
    /// for episodic heads.
    pub max_epochs: Option<u64>,
    /// Episodes between validations (episodic heads).
    pub eval_interval: u64,
    /// Validations without strict improvement before stopping.
    pub patience: u32,
    pub margin: f64,
    pub batch_size: usize,
    /// Fixed validation set size: episodes for episodic heads.
    pub val_episodes: u32,
    pub seed: u64,
}

impl TrainConfig {
    pub fn defaults(head: Head) -> TrainConfig {
        let base = TrainConfig {
            head,
            n_way: 4,
            k_shot: 5,
            q_query: 10,
            lr: 1e-4,
            max_episodes: None,
            max_epochs: None,
            eval_interval: 20,
            patience: 10,
            margin: 1.0,
            batch_size: 32,
            val_episodes: 40,
            seed: 0,
        };
        match head {
            Head::Siamese => TrainConfig { max_epochs: Some(100), patience: 100, ..base },
            Head::Relation => TrainConfig { q_query: 5, max_episodes: Some(2000), ..base },
            Head::Matching => TrainConfig {
                k_shot: 30,
                q_query: 30,
                max_episodes: Some(2000),
                ..base
            },
            Head::Proto => TrainConfig { max_episodes: Some(3000), patience: 20, ..base },
            Head::Hybrid => TrainConfig { max_epochs: Some(100), ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(CoreError::Config("patience must be >= 1".into()));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(CoreError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.head.is_episodic() {
            if self.n_way < 2 {
                return Err(CoreError::Config("n_way must be >= 2".into()));
            }
            if self.k_shot < 1 || self.q_query < 1 {
                return Err(CoreError::Config("k_shot and q_query must be >= 1".into()));
            }
            if self.eval_interval < 1 {
                return Err(CoreError::Config("eval_interval must be >= 1".into()));
            }
            if self.max_episodes.is_none() && self.max_epochs.is_none() {
                return Err(CoreError::Config("one of max_episodes / max_epochs is required".into()));
            }
        } else {
            if self.batch_size < 1 {
                return Err(CoreError::Config("batch_size must be >= 1".into()));
            }
            if self.max_epochs.is_none() {
                return Err(CoreError::Config("the siamese head requires max_epochs".into()));
            }
        }
        if self.margin < 0.0 {
            return Err(CoreError::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if self.val_episodes < 1 {
            return Err(CoreError::Config("val_episodes must be >= 1".into()));
        }
        Ok(())
    }

    /// Episode cap for episodic heads.
    pub fn episode_cap(&self) -> u64 {
        match (self.max_episodes, self.max_epochs) {
            (Some(n), _) => n,
            (None, Some(epochs)) => epochs * self.eval_interval,
            (None, None) => 0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub episode: u64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    pub elapsed_ms: u64,
}

/// Outcome of a run: the model is left holding the best-validation weights.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRecord>,
    pub best_val_accuracy: f64,
    /// Episode (or epoch) index at which the best validation occurred.
    pub best_step: u64,
    pub steps_run: u64,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// Line-delimited JSON log.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.log {
            out.push_str(&serde_json::to_string(record).expect("log serialize"));
            out.push('\n');
        }
        out
    }
}

/// Early stopping on strict validation-accuracy improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: u32,
    best: Option<f64>,
    stale: u32,
}

impl EarlyStopping {
    pub fn new(patience: u32) -> Self {
        EarlyStopping { patience, best: None, stale: 0 }
    }

    /// Returns (improved, should_stop).
    pub fn update(&mut self, accuracy: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|b| accuracy > b);
        if improved {
            self.best = Some(accuracy);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (improved, self.stale >= self.patience)
    }
}

/// Mean query accuracy over a fixed set of validation episodes.
fn mean_episode_accuracy<S: Scalar>(
    model: &FewShotModel<S>,
    episodes: &[Episode],
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for episode in episodes {
        let batch = episode.to_batch::<S>();
        let g = Graph::inference();
        let scores = model.episode_scores(&g, &batch, Mode::Eval)?;
        let preds = g.value(scores).argmax_rows();
        for (pred, &truth) in preds.iter().zip(&batch.query_labels) {
            correct += usize::from(pred == &truth);
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

fn pair_accuracy<S: Scalar>(model: &FewShotModel<S>, triplets: &[Triplet]) -> Result<f64> {
    let batch = Triplet::to_batch::<S>(triplets);
    let outcomes = crate::models::siamese_pair_eval(&model.encoder, &batch)?;
    let correct = outcomes.iter().filter(|&&c| c).count();
    Ok(correct as f64 / outcomes.len().max(1) as f64)
}

/// Episodic training: sample, forward, loss, backward, Adam; validate on a
/// fixed episode set every `eval_interval` episodes; keep the best weights.
pub fn train_episodic<S: Scalar>(
    model: &FewShotModel<S>,
    dataset: &FewShotDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if !config.head.is_episodic() {
        return Err(CoreError::Config("train_episodic cannot train the siamese head".into()));
    }
    let start = Instant::now();
    let mut rng = Pcg32::keyed(config.seed, "train-episodes");
    let mut val_rng = Pcg32::keyed(config.seed, "val-episodes");
    let val_set: Vec<Episode> = (0..config.val_episodes)
        .map(|_| {
            sample_episode(dataset, Split::Val, config.n_way, config.k_shot, config.q_query, &mut val_rng)
        })
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(config.lr);
    let mut early = EarlyStopping::new(config.patience);
    let mut best_snapshot = model.store.snapshot();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_step = 0u64;
    let mut log = Vec::new();
    let mut stopped_early = false;
    let cap = config.episode_cap();

    let mut episode_idx = 0u64;
    while episode_idx < cap {
        episode_idx += 1;
        let episode = sample_episode(
            dataset,
            Split::Train,
            config.n_way,
            config.k_shot,
            config.q_query,
            &mut rng,
        )?;
        let batch = episode.to_batch::<S>();
        let g = Graph::new();
        let loss = model
            .episode_loss(&g, &batch)
            .map_err(|e| CoreError::State(format!("episode {episode_idx}: {e}")))?;
        let loss_value = g.value(loss).item().to_f64();
        g.backward(loss)?;
        adam.step(&model.store, &g)?;

        let mut record = LogRecord {
            episode: episode_idx,
            train_loss: loss_value,
            val_accuracy: None,
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        if episode_idx % config.eval_interval == 0 {
            let val_acc = mean_episode_accuracy(model, &val_set)?;
            record.val_accuracy = Some(val_acc);
            let (improved, stop) = early.update(val_acc);
            if improved {
                best_snapshot = model.store.snapshot();
                best_val = val_acc;
                best_step = episode_idx;
            }
            if stop {
                log.push(record);
                stopped_early = true;
                break;
            }
        }
        log.push(record);
    }

    model.store.restore(&best_snapshot);
    Ok(TrainOutcome {
        log,
        best_val_accuracy: if best_val.is_finite() { best_val } else { 0.0 },
        best_step,
        steps_run: episode_idx,
        stopped_early,
    })
}

/// Epoch-based siamese training over fresh triplet batches, validated by
/// pair evaluation on a fixed held-out triplet set.
pub fn train_siamese<S: Scalar>(
    model: &FewShotModel<S>,
    dataset: &FewShotDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.config.head != Head::Siamese || config.head != Head::Siamese {
        return Err(CoreError::Config("train_siamese trains the siamese head only".into()));
    }
    let start = Instant::now();
    let mut rng = Pcg32::keyed(config.seed, "train-triplets");
    let mut val_rng = Pcg32::keyed(config.seed, "val-triplets");

    // Fixed validation triplets: at least 200 (or as many as the split yields).
    let mut val_triplets: Vec<Triplet> = Vec::new();
    while val_triplets.len() < 200 {
        let before = val_triplets.len();
        for batch in triplet_batches(dataset, Split::Val, 1, &mut val_rng)? {
            val_triplets.extend(batch);
        }
        if val_triplets.len() == before {
            break;
        }
    }

    let mut adam = Adam::new(config.lr);
    let mut early = EarlyStopping::new(config.patience);
    let mut best_snapshot = model.store.snapshot();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_step = 0u64;
    let mut log = Vec::new();
    let mut stopped_early = false;
    let max_epochs = config.max_epochs.unwrap_or(0);

    let mut epoch = 0u64;
    while epoch < max_epochs {
        epoch += 1;
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for batch in triplet_batches(dataset, Split::Train, config.batch_size, &mut rng)? {
            let tensors = Triplet::to_batch::<S>(&batch);
            let g = Graph::new();
            let loss = model
                .triplet_loss(&g, &tensors)
                .map_err(|e| CoreError::State(format!("epoch {epoch}: {e}")))?;
            epoch_loss += g.value(loss).item().to_f64();
            n_batches += 1;
            g.backward(loss)?;
            adam.step(&model.store, &g)?;
        }
        let val_acc = pair_accuracy(model, &val_triplets)?;
        let (improved, stop) = early.update(val_acc);
        if improved {
            best_snapshot = model.store.snapshot();
            best_val = val_acc;
            best_step = epoch;
        }
        log.push(LogRecord {
            episode: epoch,
            train_loss: epoch_loss / n_batches.max(1) as f64,
            val_accuracy: Some(val_acc),
            elapsed_ms: start.elapsed().as_millis() as u64,
        });
        if stop {
            stopped_early = true;
            break;
        }
    }

    model.store.restore(&best_snapshot);
    Ok(TrainOutcome {
        log,
        best_val_accuracy: if best_val.is_finite() { best_val } else { 0.0 },
        best_step,
        steps_run: epoch,
        stopped_early,
    })
}

/// Route to the head's training loop.
pub fn train<S: Scalar>(
    model: &FewShotModel<S>,
    dataset: &FewShotDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if config.head.is_episodic() {
        train_episodic(model, dataset, config)
    } else {
        train_siamese(model, dataset, config)
    }
}

/// Aggregate evaluation over `n_episodes` freshly sampled episodes (or, for
/// the siamese head, `n_episodes` batches of pair triplets).
pub fn evaluate<S: Scalar>(
    model: &FewShotModel<S>,
    dataset: &FewShotDataset,
    split: Split,
    n_episodes: u64,
    config: &TrainConfig,
) -> Result<MetricsReport> {
    let mut rng = Pcg32::keyed(config.seed, &format!("eval-{}", split.as_str()));
    if config.head.is_episodic() {
        let mut confusion = ConfusionMatrix::new(dataset.classes().to_vec());
        for _ in 0..n_episodes {
            let episode = sample_episode(
                dataset,
                split,
                config.n_way,
                config.k_shot,
                config.q_query,
                &mut rng,
            )?;
            let batch = episode.to_batch::<S>();
            let g = Graph::inference();
            let scores = model.episode_scores(&g, &batch, Mode::Eval)?;
            let preds = g.value(scores).argmax_rows();
            for (pred, &truth) in preds.iter().zip(&batch.query_labels) {
                let true_global = dataset
                    .class_index(&episode.class_map[truth])
                    .expect("episode class in dataset");
                let pred_global = dataset
                    .class_index(&episode.class_map[*pred])
                    .expect("episode class in dataset");
                confusion.record(true_global, pred_global);
            }
        }
        Ok(MetricsReport::macro_from_confusion(confusion, n_episodes))
    } else {
        let mut correct = 0u64;
        let mut incorrect = 0u64;
        let mut batches_done = 0u64;
        while batches_done < n_episodes {
            for batch in triplet_batches(dataset, split, config.batch_size, &mut rng)? {
                if batches_done >= n_episodes {
                    break;
                }
                let tensors = Triplet::to_batch::<S>(&batch);
                for ok in crate::models::siamese_pair_eval(&model.encoder, &tensors)? {
                    if ok {
                        correct += 1;
                    } else {
                        incorrect += 1;
                    }
                }
                batches_done += 1;
            }
        }
        let mut report = MetricsReport::binary_positive(correct, incorrect);
        report.n_episodes = batches_done;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_counts_stale_runs() {
        let mut es = EarlyStopping::new(2);
        assert_eq!(es.update(0.5), (true, false));
        assert_eq!(es.update(0.6), (true, false));
        assert_eq!(es.update(0.6), (false, false));
        assert_eq!(es.update(0.6), (false, true)); // stops after the 4th
    }

    #[test]
    fn strictly_increasing_never_stops() {
        let mut es = EarlyStopping::new(1);
        for i in 0..50 {
            let (improved, stop) = es.update(i as f64 * 0.01);
            assert!(improved);
            assert!(!stop);
        }
    }

    #[test]
    fn improvement_resets_the_counter() {
        let mut es = EarlyStopping::new(2);
        es.update(0.5);
        es.update(0.4);
        assert_eq!(es.update(0.9), (true, false));
        assert_eq!(es.update(0.7), (false, false));
        assert_eq!(es.update(0.7), (false, true));
    }

    #[test]
    fn frozen_model_with_patience_one_stops_after_two_validations() {
        let mut es = EarlyStopping::new(1);
        let (_, stop1) = es.update(0.25);
        assert!(!stop1);
        let (_, stop2) = es.update(0.25);
        assert!(stop2);
    }

    #[test]
    fn per_head_defaults_are_stable() {
        let hybrid = TrainConfig::defaults(Head::Hybrid);
        assert_eq!((hybrid.n_way, hybrid.k_shot, hybrid.q_query), (4, 5, 10));
        assert_eq!(hybrid.lr, 1e-4);
        assert_eq!(hybrid.patience, 10);
        assert_eq!(hybrid.max_epochs, Some(100));

        let proto = TrainConfig::defaults(Head::Proto);
        assert_eq!(proto.max_episodes, Some(3000));
        assert_eq!(proto.patience, 20);

        let matching = TrainConfig::defaults(Head::Matching);
        assert_eq!((matching.n_way, matching.k_shot, matching.q_query), (4, 30, 30));
        assert_eq!(matching.max_episodes, Some(2000));

        let siamese = TrainConfig::defaults(Head::Siamese);
        assert_eq!(siamese.batch_size, 32);
        assert_eq!(siamese.max_epochs, Some(100));
        assert_eq!(siamese.margin, 1.0);
    }
}
