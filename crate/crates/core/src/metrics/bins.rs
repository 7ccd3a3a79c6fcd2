//! True-positive rates of positive pairs grouped by a nuisance factor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::roc::ScoredPair;
use crate::catalog::NO_FINDING;
use crate::error::{Error, Result};

/// Largest age difference (years) that gets its own bin.
pub const MAX_AGE_BIN: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    AgeDiff,
    Abnormality,
    View,
}

impl FromStr for Binning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age_diff" => Ok(Binning::AgeDiff),
            "abnormality" => Ok(Binning::Abnormality),
            "view" => Ok(Binning::View),
            _ => Err(Error::InvalidArgument(format!(
                "unknown binning `{s}` (expected age_diff, abnormality or view)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bin {
    /// Whole years of age difference.
    Age(u32),
    /// A finding that appears only in the later image; `None` when no new
    /// finding appears.
    NewFinding(Option<String>),
    ViewChanged(bool),
}

impl fmt::Display for Bin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bin::Age(y) => write!(f, "{y}"),
            Bin::NewFinding(Some(name)) => f.write_str(name),
            Bin::NewFinding(None) => f.write_str("unchanged"),
            Bin::ViewChanged(true) => f.write_str("different"),
            Bin::ViewChanged(false) => f.write_str("same"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub tpr: f64,
    pub tp: u64,
    pub total: u64,
}

/// Findings of `later` that are absent from `earlier`, ignoring the
/// no-finding marker.
pub fn new_findings(earlier: &BTreeSet<String>, later: &BTreeSet<String>) -> Vec<String> {
    later
        .iter()
        .filter(|f| f.as_str() != NO_FINDING && !earlier.contains(*f))
        .cloned()
        .collect()
}

/// TPR at threshold `t` per bin over the positive pairs of `scored`.
/// Negatives are ignored. Age differences beyond [`MAX_AGE_BIN`] are
/// dropped; a pair with several new findings counts in each of their
/// bins. Bins without pairs are absent.
pub fn tpr_by_bins(scored: &[ScoredPair], binning: Binning, t: f64) -> Result<BTreeMap<Bin, BinStat>> {
    let mut counts: BTreeMap<Bin, (u64, u64)> = BTreeMap::new();
    for (i, pair) in scored.iter().enumerate().filter(|(_, p)| p.label == 1) {
        let missing = || Error::Metric(format!("positive pair {i} lacks {binning:?} metadata"));
        let meta = pair.meta.as_ref().ok_or_else(missing)?;
        let bins: Vec<Bin> = match binning {
            Binning::AgeDiff => {
                let years = meta.age_diff_years.ok_or_else(missing)?;
                if years > MAX_AGE_BIN {
                    continue;
                }
                vec![Bin::Age(years)]
            }
            Binning::Abnormality => {
                let found = meta.new_findings.as_ref().ok_or_else(missing)?;
                if found.is_empty() {
                    vec![Bin::NewFinding(None)]
                } else {
                    found.iter().map(|f| Bin::NewFinding(Some(f.clone()))).collect()
                }
            }
            Binning::View => vec![Bin::ViewChanged(meta.view_changed.ok_or_else(missing)?)],
        };
        let hit = pair.score >= t;
        for bin in bins {
            let c = counts.entry(bin).or_default();
            c.0 += hit as u64;
            c.1 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(bin, (tp, total))| {
            (
                bin,
                BinStat {
                    tpr: tp as f64 / total as f64,
                    tp,
                    total,
                },
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PairMeta;

    fn pair(score: f64, age: u32) -> ScoredPair {
        ScoredPair {
            score,
            label: 1,
            meta: Some(PairMeta {
                age_diff_years: Some(age),
                ..Default::default()
            }),
        }
    }

    #[test]
    fn age_bins_drop_large_gaps_and_empty_bins() {
        let scored = vec![pair(0.9, 0), pair(0.2, 0), pair(0.7, 3), pair(0.9, 13), ScoredPair::new(0.1, 0)];
        let bins = tpr_by_bins(&scored, Binning::AgeDiff, 0.5).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[&Bin::Age(0)], BinStat { tpr: 0.5, tp: 1, total: 2 });
        assert_eq!(bins[&Bin::Age(3)].tpr, 1.0);
    }

    #[test]
    fn missing_meta_is_an_error() {
        assert!(tpr_by_bins(&[ScoredPair::new(0.9, 1)], Binning::View, 0.5).is_err());
    }

    #[test]
    fn new_findings_ignore_marker() {
        let a = BTreeSet::from(["No Finding".to_owned()]);
        let b = BTreeSet::from(["Mass".to_owned(), "Effusion".to_owned()]);
        assert_eq!(new_findings(&a, &b), vec!["Effusion", "Mass"]);
        assert!(new_findings(&b, &a).is_empty());
    }
}
