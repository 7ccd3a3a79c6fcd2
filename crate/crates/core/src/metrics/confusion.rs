//! Thresholded confusion statistics.

use serde::{Deserialize, Serialize};

use super::roc::ScoredPair;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Ratios with a zero denominator are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub specificity: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMetrics {
    pub fn from_counts(counts: ConfusionCounts, threshold: f64) -> Self {
        let ConfusionCounts { tp, fp, tn, fn_ } = counts;
        let recall = ratio(tp, tp + fn_);
        let precision = ratio(tp, tp + fp);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        ConfusionMetrics {
            threshold,
            counts,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            specificity: ratio(tn, tn + fp),
            recall,
            precision,
            f1,
        }
    }

    /// Names of the ratios that are undefined.
    pub fn undefined(&self) -> Vec<&'static str> {
        [
            ("accuracy", self.accuracy),
            ("specificity", self.specificity),
            ("recall", self.recall),
            ("precision", self.precision),
            ("f1", self.f1),
        ]
        .into_iter()
        .filter(|(_, v)| v.is_none())
        .map(|(k, _)| k)
        .collect()
    }
}

pub fn confusion_counts(scores: &[f64], labels: &[u8], t: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= t, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Predicts positive iff `score ≥ t`.
pub fn confusion_metrics(scored: &[ScoredPair], t: f64) -> ConfusionMetrics {
    let (scores, labels): (Vec<f64>, Vec<u8>) = scored.iter().map(|s| (s.score, s.label)).unzip();
    ConfusionMetrics::from_counts(confusion_counts(&scores, &labels, t), t)
}
