//! Confusion-matrix bookkeeping and the serialized metrics report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Square confusion matrix; rows are the true class, columns the prediction.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let n = classes.len();
        ConfusionMatrix { classes, counts: vec![0; n * n] }
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) {
        let n = self.classes.len();
        self.counts[true_class * n + predicted] += 1;
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes.len() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.classes.len();
        let trace: u64 = (0..n).map(|i| self.counts[i * n + i]).sum();
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            trace as f64 / total as f64
        }
    }

    /// Per-class precision, recall, F1, and support. Undefined ratios
    /// (no predictions or no ground truth for a class) score 0 and emit a
    /// warning string.
    pub fn per_class(&self) -> (Vec<PerClassMetrics>, Vec<String>) {
        let n = self.classes.len();
        let mut out = Vec::with_capacity(n);
        let mut warnings = Vec::new();
        for c in 0..n {
            let tp = self.counts[c * n + c];
            let predicted: u64 = (0..n).map(|r| self.counts[r * n + c]).sum();
            let actual: u64 = (0..n).map(|k| self.counts[c * n + k]).sum();
            let precision = if predicted == 0 {
                warnings.push(format!(
                    "precision undefined for class '{}' (no predictions); reported as 0",
                    self.classes[c]
                ));
                0.0
            } else {
                tp as f64 / predicted as f64
            };
            let recall = if actual == 0 {
                warnings.push(format!(
                    "recall undefined for class '{}' (no ground-truth samples); reported as 0",
                    self.classes[c]
                ));
                0.0
            } else {
                tp as f64 / actual as f64
            };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            out.push(PerClassMetrics { precision, recall, f1, support: actual });
        }
        (out, warnings)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PerClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// The serialized evaluation report. Field order is the wire format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: BTreeMap<String, PerClassMetrics>,
    pub n_episodes: u64,
    #[serde(skip)]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Macro-averaged metrics: the episodic heads are class-balanced, so
    /// the unweighted mean over classes is the natural aggregate.
    pub fn macro_from_confusion(confusion: ConfusionMatrix, n_episodes: u64) -> MetricsReport {
        let (per_class, warnings) = confusion.per_class();
        let n = per_class.len().max(1) as f64;
        let precision = per_class.iter().map(|m| m.precision).sum::<f64>() / n;
        let recall = per_class.iter().map(|m| m.recall).sum::<f64>() / n;
        let f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / n;
        let per_class_map = confusion
            .classes()
            .iter()
            .cloned()
            .zip(per_class)
            .collect();
        MetricsReport {
            accuracy: confusion.accuracy(),
            precision,
            recall,
            f1,
            per_class: per_class_map,
            n_episodes,
            confusion: Some(confusion),
            warnings,
        }
    }

    /// Binary pair-evaluation metrics for the siamese head: every triplet's
    /// ground truth is "positive is closer", so the headline precision,
    /// recall, and F1 are the positive class's.
    pub fn binary_positive(correct: u64, incorrect: u64) -> MetricsReport {
        let mut confusion =
            ConfusionMatrix::new(vec!["positive".to_string(), "negative".to_string()]);
        for _ in 0..correct {
            confusion.record(0, 0);
        }
        for _ in 0..incorrect {
            confusion.record(0, 1);
        }
        let (per_class, mut warnings) = confusion.per_class();
        // The negative row is structurally empty; its undefined recall is
        // expected, not a data problem.
        warnings.retain(|w| !w.contains("'negative'"));
        let positive = per_class[0].clone();
        let mut per_class_map = BTreeMap::new();
        per_class_map.insert("positive".to_string(), positive.clone());
        MetricsReport {
            accuracy: confusion.accuracy(),
            precision: positive.precision,
            recall: positive.recall,
            f1: positive.f1,
            per_class: per_class_map,
            n_episodes: correct + incorrect,
            confusion: Some(confusion),
            warnings,
        }
    }

    /// Deterministic JSON encoding (struct field order, sorted class map).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand confusion-matrix oracle from the worked example:
    /// truths [0,0,1,1], predictions [0,1,1,1].
    #[test]
    fn worked_example_macro_metrics() {
        let mut cm = ConfusionMatrix::new(vec!["0".into(), "1".into()]);
        for (t, p) in [(0, 0), (0, 1), (1, 1), (1, 1)] {
            cm.record(t, p);
        }
        let report = MetricsReport::macro_from_confusion(cm, 1);
        assert!((report.accuracy - 0.75).abs() < 1e-4);
        assert!((report.precision - 0.8333).abs() < 1e-4);
        assert!((report.recall - 0.75).abs() < 1e-4);
        assert!((report.f1 - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        for c in 0..3 {
            for _ in 0..5 {
                cm.record(c, c);
            }
        }
        let report = MetricsReport::macro_from_confusion(cm, 3);
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.f1, 1.0);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn undefined_precision_scores_zero_with_warning() {
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into()]);
        // Everything predicted as 'a'.
        cm.record(0, 0);
        cm.record(1, 0);
        let report = MetricsReport::macro_from_confusion(cm, 1);
        assert!(report.warnings.iter().any(|w| w.contains("'b'")));
        assert_eq!(report.per_class["b"].precision, 0.0);
    }

    #[test]
    fn binary_pair_metrics_match_the_closed_form() {
        // 8 of 10 correct: accuracy = recall = 0.8, precision = 1,
        // F1 = 2 * 0.8 / 1.8.
        let report = MetricsReport::binary_positive(8, 2);
        assert!((report.accuracy - 0.8).abs() < 1e-12);
        assert_eq!(report.precision, 1.0);
        assert!((report.recall - 0.8).abs() < 1e-12);
        assert!((report.f1 - 2.0 * 0.8 / 1.8).abs() < 1e-12);
    }

    #[test]
    fn json_has_exactly_the_contract_keys() {
        let mut cm = ConfusionMatrix::new(vec!["x".into()]);
        cm.record(0, 0);
        let report = MetricsReport::macro_from_confusion(cm, 1);
        let value: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, vec!["accuracy", "f1", "n_episodes", "per_class", "precision", "recall"]);
    }

    #[test]
    fn report_metrics_recompute_from_stored_confusion() {
        use crate::rng::Pcg32;
        let mut rng = Pcg32::new(11, 2);
        for trial in 0..50 {
            let n = 2 + (trial % 5);
            let mut cm = ConfusionMatrix::new((0..n).map(|i| format!("c{i}")).collect());
            for _ in 0..60 {
                cm.record(rng.below(n), rng.below(n));
            }
            let report = MetricsReport::macro_from_confusion(cm.clone(), 1);
            // Brute-force recomputation from the stored matrix.
            let stored = report.confusion.as_ref().unwrap();
            let mut correct = 0u64;
            let mut total = 0u64;
            let (mut mp, mut mr, mut mf) = (0.0, 0.0, 0.0);
            for c in 0..n {
                let tp = stored.count(c, c) as f64;
                let mut pred = 0.0;
                let mut act = 0.0;
                for r in 0..n {
                    pred += stored.count(r, c) as f64;
                    act += stored.count(c, r) as f64;
                    total += stored.count(c, r);
                }
                correct += stored.count(c, c);
                let p = if pred > 0.0 { tp / pred } else { 0.0 };
                let r = if act > 0.0 { tp / act } else { 0.0 };
                mp += p;
                mr += r;
                mf += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            }
            let nf = n as f64;
            assert!((report.accuracy - correct as f64 / total as f64).abs() < 1e-12);
            assert!((report.precision - mp / nf).abs() < 1e-12);
            assert!((report.recall - mr / nf).abs() < 1e-12);
            assert!((report.f1 - mf / nf).abs() < 1e-12);
        }
    }
}
