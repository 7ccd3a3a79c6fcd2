//! ROC curves and the rank-statistic AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metadata of a positive pair used for robustness binning.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    /// Absolute age difference in whole years.
    pub age_diff_years: Option<u32>,
    /// Findings present in the later image but not the earlier one.
    pub new_findings: Option<Vec<String>>,
    pub view_changed: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub score: f64,
    pub label: u8,
    pub meta: Option<PairMeta>,
}

impl ScoredPair {
    pub fn new(score: f64, label: u8) -> Self {
        ScoredPair { score, label, meta: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores ≥ threshold are predicted positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// A run of equal scores: positives and negatives in it.
#[derive(Clone, Copy, Debug)]
pub(crate) struct TieGroup {
    pub score: f64,
    pub pos: u64,
    pub neg: u64,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Metric(format!("score {i} is NaN")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {l} is not binary")));
    }
    Ok(())
}

/// Tie groups in ascending score order, plus the index of the group of
/// every input item.
pub(crate) fn tie_groups(scores: &[f64], labels: &[u8]) -> (Vec<TieGroup>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<TieGroup> = Vec::new();
    let mut group_of = vec![0; scores.len()];
    for i in order {
        let s = scores[i];
        match groups.last_mut() {
            Some(g) if g.score == s => {}
            _ => groups.push(TieGroup { score: s, pos: 0, neg: 0 }),
        }
        let g = groups.last_mut().expect("just pushed");
        if labels[i] == 1 {
            g.pos += 1;
        } else {
            g.neg += 1;
        }
        group_of[i] = groups.len() - 1;
    }
    (groups, group_of)
}

/// AUC from weighted tie-group counts: twice the Mann–Whitney U over
/// twice P·N, all in integers until the final division.
pub(crate) fn auc_from_counts(counts: impl Iterator<Item = (u64, u64)>) -> Option<f64> {
    let (mut two_u, mut neg_below, mut pos_total) = (0u128, 0u128, 0u128);
    for (p, n) in counts {
        let (p, n) = (p as u128, n as u128);
        two_u += 2 * p * neg_below + p * n;
        neg_below += n;
        pos_total += p;
    }
    if pos_total == 0 || neg_below == 0 {
        return None;
    }
    Some(two_u as f64 / (2 * pos_total * neg_below) as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let (groups, _) = tie_groups(scores, labels);
    auc_from_counts(groups.iter().map(|g| (g.pos, g.neg)))
        .ok_or_else(|| Error::Metric("AUC needs both positive and negative pairs".into()))
}

/// ROC points from the strictest threshold (nothing positive) down to
/// the lowest score (everything positive).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    check(scores, labels)?;
    let (groups, _) = tie_groups(scores, labels);
    let p: u64 = groups.iter().map(|g| g.pos).sum();
    let n: u64 = groups.iter().map(|g| g.neg).sum();
    if p == 0 || n == 0 {
        return Err(Error::Metric("ROC needs both positive and negative pairs".into()));
    }
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for g in groups.iter().rev() {
        tp += g.pos;
        fp += g.neg;
        points.push(RocPoint {
            threshold: g.score,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
    }
    Ok(points)
}

fn split(scored: &[ScoredPair]) -> (Vec<f64>, Vec<u8>) {
    scored.iter().map(|s| (s.score, s.label)).unzip()
}

pub fn roc_and_auc(scored: &[ScoredPair]) -> Result<(Vec<RocPoint>, f64)> {
    let (scores, labels) = split(scored);
    Ok((roc_curve(&scores, &labels)?, auc(&scores, &labels)?))
}

/// Two-column `fpr,tpr` CSV.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.fpr, p.tpr));
    }
    out
}
