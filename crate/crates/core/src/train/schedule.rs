//! Per-batch 1cycle learning-rate curve.

use crate::error::{Error, Result};

/// Piecewise-linear cycle over steps `0..total_steps`: `lo` at the first
/// and last step, `hi` at step `(total_steps − 1) / 2`. Cycles shorter
/// than three steps stay at `lo`.
pub fn one_cycle_lr(step: usize, total_steps: usize, lo: f64, hi: f64) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::InvalidArgument(format!("step {step} outside 0..{total_steps}")));
    }
    let last = total_steps - 1;
    let peak = last / 2;
    if peak == 0 || step == 0 || step == last {
        return Ok(lo);
    }
    if step == peak {
        return Ok(hi);
    }
    Ok(if step < peak {
        lo + (hi - lo) * step as f64 / peak as f64
    } else {
        hi - (hi - lo) * (step - peak) as f64 / (last - peak) as f64
    })
}
