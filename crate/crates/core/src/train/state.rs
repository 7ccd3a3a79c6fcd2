//! Per-epoch bookkeeping and early stopping.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction in which the monitored value improves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Goal {
    #[default]
    Minimize,
    Maximize,
}

impl Goal {
    pub fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            Goal::Minimize => candidate < best,
            Goal::Maximize => candidate > best,
        }
    }

    pub fn worst(self) -> f64 {
        match self {
            Goal::Minimize => f64::INFINITY,
            Goal::Maximize => f64::NEG_INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation AUC for verification, Precision@1 for retrieval; NaN when
    /// not computed.
    pub val_metric: f64,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    /// Best value of the monitored quantity so far.
    pub best_val_metric: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub goal: Goal,
    pub history: Vec<EpochRecord>,
    /// Learning rate of every optimizer step, in order.
    pub lr_trace: Vec<f64>,
}

impl TrainState {
    pub fn new(goal: Goal) -> Self {
        TrainState {
            epoch: 0,
            global_step: 0,
            best_val_metric: goal.worst(),
            best_epoch: 0,
            epochs_since_improvement: 0,
            goal,
            history: Vec::new(),
            lr_trace: Vec::new(),
        }
    }

    /// Records a finished epoch; `monitored` is the value early stopping
    /// looks at. Returns true when it is a new best.
    pub fn record(&mut self, record: EpochRecord, monitored: f64) -> bool {
        self.epoch = record.epoch;
        self.history.push(record);
        if self.goal.improves(monitored, self.best_val_metric) {
            self.best_val_metric = monitored;
            self.best_epoch = self.epoch;
            self.epochs_since_improvement = 0;
            true
        } else {
            self.epochs_since_improvement += 1;
            false
        }
    }

    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,val_loss,val_metric,lr\n");
        for r in &self.history {
            out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.val_metric, r.lr));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// True iff the last `patience` entries hold no strict improvement over
/// the best value before them (lower is better).
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    early_stop_check_with(history, patience, Goal::Minimize)
}

pub fn early_stop_check_with(history: &[f64], patience: usize, goal: Goal) -> bool {
    if patience == 0 || history.len() <= patience {
        return false;
    }
    let split = history.len() - patience;
    let best = history[..split]
        .iter()
        .copied()
        .fold(goal.worst(), |b, v| if goal.improves(v, b) { v } else { b });
    !history[split..].iter().any(|&v| goal.improves(v, best))
}
