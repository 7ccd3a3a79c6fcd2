//! Contrastive training of the embedding network: SGD with weight decay,
//! per-batch 1cycle schedule, cross-batch memory and two-phase unfreezing.

use std::ops::Range;
use std::path::PathBuf;

use rand::seq::SliceRandom;

use super::loss::{contrastive_batch, contrastive_loss};
use super::optim::Sgd;
use super::schedule::one_cycle_lr;
use super::state::{EpochRecord, Goal, TrainState};
use crate::catalog::{filter_manifest, ImageBank, Manifest};
use crate::error::{Error, Result};
use crate::metrics::{leave_one_out, retrieval_report, GalleryEntry};
use crate::mining::{enumerate_batch_pairs, CrossBatchMemory};
use crate::nn::embedding::{euclidean, HEAD_PREFIX};
use crate::nn::{Checkpoint, Embedding, EmbeddingNet, ModelSpec, ParamStore};
use crate::par;
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq)]
pub struct ReidTrainConfig {
    pub lr_lower: f64,
    pub lr_upper: f64,
    pub weight_decay: f64,
    pub margin: f64,
    /// Head-only epochs.
    pub phase1_epochs: usize,
    /// Full-network epochs.
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for ReidTrainConfig {
    fn default() -> Self {
        ReidTrainConfig {
            lr_lower: 0.0063,
            lr_upper: 0.1584,
            weight_decay: 1e-5,
            margin: 1.0,
            phase1_epochs: 30,
            phase2_epochs: 50,
            batch_size: 32,
            memory_capacity: 128,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl ReidTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr_lower > 0.0 && self.lr_lower < self.lr_upper && self.lr_upper.is_finite()) {
            problems.push(format!(
                "learning-rate bounds must satisfy 0 < lower < upper, got {} and {}",
                self.lr_lower, self.lr_upper
            ));
        }
        if !(self.margin > 0.0) {
            problems.push(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.weight_decay >= 0.0) {
            problems.push(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size < 2 {
            problems.push(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Drops patients with a single image.
pub fn retrieval_training_set(manifest: &Manifest) -> Manifest {
    let index = manifest.patient_index();
    filter_manifest(manifest, |r| index[&r.patient_id].len() > 1)
}

/// Embeds every image of `manifest`.
pub fn embed_manifest(net: &EmbeddingNet, store: &ParamStore, manifest: &Manifest, bank: &ImageBank) -> Result<Vec<GalleryEntry>> {
    let inputs: Vec<(&str, &str, &Tensor3)> = manifest
        .records()
        .iter()
        .map(|r| Ok((r.image_id.as_str(), r.patient_id.as_str(), bank.get(&r.image_id)?)))
        .collect::<Result<_>>()?;
    par::map_slice(&inputs, |&(id, pid, x)| {
        Ok(GalleryEntry {
            image_id: id.to_owned(),
            patient_id: pid.to_owned(),
            embedding: net.embed(store, x)?,
        })
    })
    .into_iter()
    .collect()
}

/// Mean contrastive loss over all unordered pairs of `entries`.
fn all_pairs_loss(entries: &[GalleryEntry], margin: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            let d = euclidean(a.embedding.values(), b.embedding.values());
            total += contrastive_loss(d, (a.patient_id == b.patient_id) as u8, margin);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

struct Phase {
    index: u64,
    epochs: usize,
    train_trunk: bool,
}

/// Runs both phases on `store` and returns the final parameters.
///
/// Phase 1 updates only parameters under the head prefix; phase 2
/// updates all of them. Each phase runs its own full 1cycle and starts
/// with an empty memory. When `val` is given, Precision@1 and the mean
/// all-pairs contrastive loss of a leave-one-out evaluation are recorded
/// per epoch.
pub fn train_reid(
    net: &EmbeddingNet,
    mut store: ParamStore,
    train: &Manifest,
    val: Option<&Manifest>,
    bank: &ImageBank,
    config: &ReidTrainConfig,
) -> Result<(ParamStore, TrainState)> {
    config.validate()?;
    let train = retrieval_training_set(train);
    if train.is_empty() {
        return Err(Error::Mining("no patient has more than one image".into()));
    }
    let images: Vec<(&Tensor3, &str)> = train
        .records()
        .iter()
        .map(|r| Ok((bank.get(&r.image_id)?, r.patient_id.as_str())))
        .collect::<Result<_>>()?;
    let mut state = TrainState::new(Goal::Maximize);
    let sgd = Sgd::new(config.weight_decay);
    let spec = ModelSpec::Embedding(net.spec().clone());
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let all: Vec<Range<usize>> = vec![0..store.len()];
    let head = store.spans_with_prefix(HEAD_PREFIX);
    let batches_per_epoch = images.len().div_ceil(config.batch_size);
    let phases = [
        Phase {
            index: 1,
            epochs: config.phase1_epochs,
            train_trunk: false,
        },
        Phase {
            index: 2,
            epochs: config.phase2_epochs,
            train_trunk: true,
        },
    ];
    let mut epoch_counter = 0;
    for phase in phases {
        let spans = if phase.train_trunk { &all } else { &head };
        let total_steps = phase.epochs * batches_per_epoch;
        let mut memory = CrossBatchMemory::new(config.memory_capacity);
        let mut phase_step = 0;
        for epoch in 0..phase.epochs {
            epoch_counter += 1;
            let mut order: Vec<usize> = (0..images.len()).collect();
            order.shuffle(&mut rng_for(config.seed, &[stream::EPOCH_ORDER, phase.index, epoch as u64]));
            let mut loss_sum = 0.0;
            let mut lr = config.lr_lower;
            for batch in order.chunks(config.batch_size) {
                lr = one_cycle_lr(phase_step, total_steps, config.lr_lower, config.lr_upper)?;
                let fwds = par::map_slice(batch, |&i| net.forward_cached(&store, images[i].0));
                let fwds = fwds.into_iter().collect::<Result<Vec<_>>>()?;
                let outputs: Vec<Vec<f64>> = fwds.iter().map(|f| f.output.clone()).collect();
                let tagged: Vec<(Embedding, String)> = outputs
                    .iter()
                    .zip(batch)
                    .map(|(o, &i)| Ok((Embedding::new(o.clone())?, images[i].1.to_owned())))
                    .collect::<Result<_>>()
                    .map_err(|_: Error| divergence(epoch_counter, state.global_step, f64::NAN, &state))?;
                let pairs = enumerate_batch_pairs(&tagged, &memory);
                let (loss, out_grads) = contrastive_batch(&outputs, &memory, &pairs, config.margin);
                if !loss.is_finite() {
                    return Err(divergence(epoch_counter, state.global_step, loss, &state));
                }
                let (grads, _) = par::chunked_sum(batch.len(), store.len(), |k, acc| {
                    net.backward(&store, images[batch[k]].0, &fwds[k], &out_grads[k], acc, phase.train_trunk);
                    0.0
                });
                if grads.iter().any(|g| !g.is_finite()) {
                    return Err(divergence(epoch_counter, state.global_step, loss, &state));
                }
                sgd.step(store.data_mut(), &grads, lr, spans);
                memory.push(tagged, state.global_step);
                state.global_step += 1;
                state.lr_trace.push(lr);
                phase_step += 1;
                loss_sum += loss;
            }
            let (val_loss, val_metric) = match val {
                Some(v) => {
                    let entries = embed_manifest(net, &store, v, bank)?;
                    let lists = leave_one_out(&entries);
                    let p1 = retrieval_report(&lists).map_or(f64::NAN, |r| r.precision_at_1);
                    (all_pairs_loss(&entries, config.margin), p1)
                }
                None => (f64::NAN, f64::NAN),
            };
            state.record(
                EpochRecord {
                    epoch: epoch_counter,
                    train_loss: loss_sum / batches_per_epoch as f64,
                    val_loss,
                    val_metric,
                    lr,
                },
                val_metric,
            );
            if let Some(dir) = &config.checkpoint_dir {
                Checkpoint::new(&spec, &store, state.global_step)
                    .save(&dir.join(format!("epoch_{epoch_counter:03}.ckpt")))?;
            }
        }
    }
    if let Some(dir) = &config.checkpoint_dir {
        Checkpoint::new(&spec, &store, state.global_step).save(&dir.join("last.ckpt"))?;
    }
    Ok((store, state))
}

fn divergence(epoch: usize, step: u64, loss: f64, state: &TrainState) -> Error {
    Error::Divergence {
        epoch,
        step: step as usize,
        loss,
        state: Box::new(state.clone()),
    }
}
