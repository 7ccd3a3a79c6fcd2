//! Serialized verification reports.

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_auc_ci, ConfidenceInterval};
use super::confusion::{confusion_counts, ConfusionCounts, ConfusionMetrics};
use super::roc::auc;
use crate::error::Result;

/// Version of the JSON layout of all reports.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub pairs: usize,
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
    pub threshold: f64,
    pub accuracy: Option<f64>,
    pub specificity: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub counts: ConfusionCounts,
    /// Names of metrics left out because their denominator was zero.
    pub undefined: Vec<String>,
}

pub fn verification_report(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
    n_boot: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let point = auc(scores, labels)?;
    let ConfidenceInterval { low, high, .. } = bootstrap_auc_ci(scores, labels, n_boot, 0.05, seed)?;
    let m = ConfusionMetrics::from_counts(confusion_counts(scores, labels, threshold), threshold);
    Ok(VerificationReport {
        schema_version: SCHEMA_VERSION,
        pairs: scores.len(),
        auc: point,
        ci_low: low,
        ci_high: high,
        n_boot,
        threshold,
        accuracy: m.accuracy,
        specificity: m.specificity,
        recall: m.recall,
        precision: m.precision,
        f1: m.f1,
        counts: m.counts,
        undefined: m.undefined().into_iter().map(str::to_owned).collect(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header plus one row; undefined ratios are empty cells.
    pub fn to_csv(&self) -> String {
        format!(
            "pairs,auc,ci_low,ci_high,n_boot,threshold,accuracy,specificity,recall,precision,f1,tp,fp,tn,fn\n\
             {},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.pairs,
            self.auc,
            self.ci_low,
            self.ci_high,
            self.n_boot,
            self.threshold,
            opt(self.accuracy),
            opt(self.specificity),
            opt(self.recall),
            opt(self.precision),
            opt(self.f1),
            self.counts.tp,
            self.counts.fp,
            self.counts.tn,
            self.counts.fn_,
        )
    }
}

impl super::retrieval::RetrievalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        format!(
            "queries,skipped,map_at_r,r_precision,precision_at_1\n{},{},{},{},{}\n",
            self.queries, self.skipped, self.map_at_r, self.r_precision, self.precision_at_1
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_absent_fields() {
        let r = verification_report(&[0.1, 0.2, 0.3], &[1, 0, 1], 0.9, 50, 1).unwrap();
        assert_eq!(r.precision, None);
        assert_eq!(r.undefined, vec!["precision", "f1"]);
        let back: VerificationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_json().contains("\"precision\": null"));
        assert_eq!(r.to_csv().lines().count(), 2);
    }
}
