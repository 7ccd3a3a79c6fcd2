//! BCE / Adam training of the verification network with early stopping.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::bce_batch;
use super::optim::Adam;
use super::state::{early_stop_check_with, EpochRecord, Goal, TrainState};
use crate::catalog::{ImageBank, Manifest};
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::mining::{balanced_eval_pairs, build_training_pairs, MiningConfig, PairSet};
use crate::nn::{Checkpoint, ModelSpec, ParamStore, VerificationNet};
use crate::par;
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor3;

/// Quantity watched by early stopping and best-epoch selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    ValLoss,
    ValAuc,
}

impl Monitor {
    pub fn goal(self) -> Goal {
        match self {
            Monitor::ValLoss => Goal::Minimize,
            Monitor::ValAuc => Goal::Maximize,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub mining: MiningConfig,
    pub monitor: Monitor,
    /// Leaves trunk parameters at their initial values.
    pub freeze_trunk: bool,
    /// Seed of the fixed balanced validation pair set.
    pub val_seed: u64,
    /// Where `epoch_NNN.ckpt` and `best.ckpt` go, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

impl VerifTrainConfig {
    pub fn new(mining: MiningConfig) -> Self {
        VerifTrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            patience: 5,
            max_epochs: 100,
            val_seed: mining.seed ^ 0x5eed,
            mining,
            monitor: Monitor::ValLoss,
            freeze_trunk: false,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            problems.push(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.patience < 1 {
            problems.push("patience must be at least 1".to_owned());
        }
        if self.max_epochs < 1 {
            problems.push("max_epochs must be at least 1".to_owned());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

type Resolved<'a> = Vec<(&'a Tensor3, &'a Tensor3, u8)>;

fn resolve<'a>(pairs: &PairSet, bank: &'a ImageBank) -> Result<Resolved<'a>> {
    pairs
        .pairs
        .iter()
        .map(|p| Ok((bank.get(&p.image_id_1)?, bank.get(&p.image_id_2)?, p.label)))
        .collect()
}

fn check_shapes(resolved: &Resolved<'_>, r: usize) -> Result<()> {
    for &(a, b, _) in resolved {
        for x in [a, b] {
            if x.shape() != [3, r, r] {
                return Err(Error::Shape {
                    expected: format!("3x{r}x{r}"),
                    actual: x.shape_string(),
                });
            }
        }
    }
    Ok(())
}

/// Scores every pair of `pairs`, in order.
pub fn score_pairs(net: &VerificationNet, store: &ParamStore, pairs: &PairSet, bank: &ImageBank) -> Result<Vec<f64>> {
    let resolved = resolve(pairs, bank)?;
    par::map_slice(&resolved, |&(a, b, _)| net.forward(store, a, b))
        .into_iter()
        .collect()
}

/// Mean BCE and AUC of the network on `pairs`.
pub fn evaluate_pairs(
    net: &VerificationNet,
    store: &ParamStore,
    pairs: &PairSet,
    bank: &ImageBank,
) -> Result<(f64, f64)> {
    let scores = score_pairs(net, store, pairs, bank)?;
    let labels: Vec<u8> = pairs.pairs.iter().map(|p| p.label).collect();
    let scored: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    Ok((bce_batch(&scored), auc(&scores, &labels)?))
}

/// Trains `store` in place on pairs mined from `train` and returns the
/// parameters of the best validation epoch together with the run state.
pub fn train_verification(
    net: &VerificationNet,
    mut store: ParamStore,
    train: &Manifest,
    val: &Manifest,
    bank: &ImageBank,
    config: &VerifTrainConfig,
) -> Result<(ParamStore, TrainState)> {
    config.validate()?;
    let val_pairs = balanced_eval_pairs(val, config.val_seed)?;
    resolve(&val_pairs, bank)?;
    let goal = config.monitor.goal();
    let mut state = TrainState::new(goal);
    let mut adam = Adam::new(config.learning_rate, store.len());
    let mut best = store.clone();
    let mut monitored_history = Vec::new();
    let spec = ModelSpec::Verification(net.spec().clone());
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for epoch in 1..=config.max_epochs {
        let mut pairs = build_training_pairs(train, &config.mining, epoch as u64)?;
        pairs
            .pairs
            .shuffle(&mut rng_for(config.mining.seed, &[stream::EPOCH_ORDER, epoch as u64]));
        let resolved = resolve(&pairs, bank)?;
        check_shapes(&resolved, net.spec().input_resolution)?;
        let mut loss_sum = 0.0;
        for (b, batch) in resolved.chunks(config.batch_size).enumerate() {
            let (mut grads, loss) = par::chunked_sum(batch.len(), store.len(), |i, acc| {
                let (x1, x2, y) = batch[i];
                net.bce_accumulate(&store, x1, x2, y, acc, !config.freeze_trunk)
                    .expect("inputs checked by resolve")
            });
            let n = batch.len() as f64;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step: b,
                    loss: loss / n,
                    state: Box::new(state),
                });
            }
            grads.iter_mut().for_each(|g| *g /= n);
            adam.step(store.data_mut(), &grads);
            state.global_step += 1;
            state.lr_trace.push(config.learning_rate);
            loss_sum += loss;
        }
        let train_loss = loss_sum / resolved.len().max(1) as f64;
        let (val_loss, val_auc) = evaluate_pairs(net, &store, &val_pairs, bank)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: state.global_step as usize,
                loss: val_loss,
                state: Box::new(state),
            });
        }
        let monitored = match config.monitor {
            Monitor::ValLoss => val_loss,
            Monitor::ValAuc => val_auc,
        };
        monitored_history.push(monitored);
        let improved = state.record(
            EpochRecord {
                epoch,
                train_loss,
                val_loss,
                val_metric: val_auc,
                lr: config.learning_rate,
            },
            monitored,
        );
        if improved {
            best = store.clone();
        }
        if let Some(dir) = &config.checkpoint_dir {
            let ckpt = Checkpoint::new(&spec, &store, state.global_step);
            ckpt.save(&dir.join(format!("epoch_{epoch:03}.ckpt")))?;
            if improved {
                ckpt.save(&dir.join("best.ckpt"))?;
            }
        }
        if early_stop_check_with(&monitored_history, config.patience, goal) {
            break;
        }
    }
    Ok((best, state))
}
