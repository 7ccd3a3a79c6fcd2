//! Percentile bootstrap confidence intervals for the AUC.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::roc::{auc_from_counts, tie_groups};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub low: f64,
    pub high: f64,
    pub n_boot: usize,
    pub alpha: f64,
    /// Resamples discarded because they lacked a class.
    pub redraws: u64,
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Resamples `(score, label)` pairs with replacement `n_boot` times and
/// returns the `alpha/2` and `1 − alpha/2` percentiles of the resampled
/// AUCs. Replicate `b` draws from its own stream derived from
/// `(seed, b)`, so results do not depend on scheduling.
pub fn bootstrap_auc_ci(
    scores: &[f64],
    labels: &[u8],
    n_boot: usize,
    alpha: f64,
    seed: u64,
) -> Result<ConfidenceInterval> {
    super::roc::auc(scores, labels)?;
    if n_boot == 0 {
        return Err(Error::InvalidArgument("n_boot must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (groups, group_of) = tie_groups(scores, labels);
    let n = scores.len();
    let replicates = par::map_range(n_boot, |b| {
        let mut rng = rng_for(seed, &[stream::BOOTSTRAP, b as u64]);
        let mut redraws = 0u64;
        let mut counts = vec![(0u64, 0u64); groups.len()];
        loop {
            counts.iter_mut().for_each(|c| *c = (0, 0));
            for _ in 0..n {
                let i = rng.random_range(0..n);
                let c = &mut counts[group_of[i]];
                if labels[i] == 1 {
                    c.0 += 1;
                } else {
                    c.1 += 1;
                }
            }
            if let Some(a) = auc_from_counts(counts.iter().copied()) {
                return (a, redraws);
            }
            redraws += 1;
        }
    });
    let redraws = replicates.iter().map(|r| r.1).sum();
    let mut aucs: Vec<f64> = replicates.into_iter().map(|r| r.0).collect();
    aucs.sort_by(f64::total_cmp);
    Ok(ConfidenceInterval {
        low: percentile(&aucs, alpha / 2.0),
        high: percentile(&aucs, 1.0 - alpha / 2.0),
        n_boot,
        alpha,
        redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores_give_degenerate_interval() {
        let scores = [0.9, 0.8, 0.95, 0.1, 0.2, 0.3];
        let labels = [1, 1, 1, 0, 0, 0];
        let ci = bootstrap_auc_ci(&scores, &labels, 500, 0.05, 1).unwrap();
        assert_eq!((ci.low, ci.high), (1.0, 1.0));
    }

    #[test]
    fn tiny_sets_need_redraws_and_stay_reproducible() {
        let scores = [0.9, 0.1];
        let labels = [1, 0];
        let a = bootstrap_auc_ci(&scores, &labels, 200, 0.05, 3).unwrap();
        let b = bootstrap_auc_ci(&scores, &labels, 200, 0.05, 3).unwrap();
        assert!(a.redraws > 0);
        assert_eq!(a, b);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert_eq!(percentile(&v, 0.1), 0.4);
        assert_eq!(percentile(&v, 1.0), 4.0);
    }
}
