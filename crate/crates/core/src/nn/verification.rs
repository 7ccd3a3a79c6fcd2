//! Siamese verification network: shared trunk → 128-d features per
//! branch → |σ(z₁) − σ(z₂)| → affine → sigmoid score.

use serde::{Deserialize, Serialize};

use super::layers::{adaptive_avg_pool, adaptive_avg_pool_backward, sigmoid, Linear};
use super::params::ParamStore;
use super::trunk::{Trunk, TrunkSpec};
use crate::error::{Error, Result};
use crate::nn::embedding::EMBEDDING_DIM;
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor3;

/// Probabilities are clamped this far from 0 and 1 before logarithms.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationNetSpec {
    pub trunk: TrunkSpec,
    /// Side of the average-pooling grid between trunk and feature layer;
    /// 1 is global average pooling.
    pub pool_grid: usize,
    pub input_resolution: usize,
}

#[derive(Clone, Debug)]
pub struct BranchCache {
    pub acts: Vec<Tensor3>,
    pooled: Vec<f64>,
    /// Sigmoid of the 128-d feature vector.
    pub activations: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VerificationForward {
    pub score: f64,
    pub branches: [BranchCache; 2],
    merged: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VerificationNet {
    spec: VerificationNetSpec,
    trunk: Trunk,
    features: Linear,
    head: Linear,
}

impl VerificationNet {
    pub fn new(spec: &VerificationNetSpec, seed: u64) -> Result<(Self, ParamStore)> {
        spec.trunk.validate()?;
        if spec.pool_grid == 0 {
            return Err(Error::InvalidArgument("pool grid must be positive".into()));
        }
        let mut rng = rng_for(seed, &[stream::INIT]);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&spec.trunk, &mut store, "trunk", &mut rng);
        let flat = spec.trunk.out_channels() * spec.pool_grid * spec.pool_grid;
        let features = Linear::new(&mut store, "features", flat, EMBEDDING_DIM, 1.0, &mut rng);
        let head = Linear::new(&mut store, "head", EMBEDDING_DIM, 1, 1.0, &mut rng);
        Ok((
            VerificationNet {
                spec: spec.clone(),
                trunk,
                features,
                head,
            },
            store,
        ))
    }

    pub fn spec(&self) -> &VerificationNetSpec {
        &self.spec
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        let r = self.spec.input_resolution;
        if x.shape() != [3, r, r] {
            return Err(Error::Shape {
                expected: format!("3x{r}x{r}"),
                actual: x.shape_string(),
            });
        }
        Ok(())
    }

    fn branch(&self, store: &ParamStore, x: &Tensor3) -> BranchCache {
        let acts = self.trunk.forward(store, x);
        let pooled = adaptive_avg_pool(acts.last().expect("non-empty trunk"), self.spec.pool_grid).into_vec();
        let activations = self.features.forward(store, &pooled).into_iter().map(sigmoid).collect();
        BranchCache {
            acts,
            pooled,
            activations,
        }
    }

    /// Raw head output, before the final sigmoid.
    fn logit(&self, store: &ParamStore, merged: &[f64]) -> f64 {
        self.head.forward(store, merged)[0]
    }

    pub fn forward_cached(&self, store: &ParamStore, x1: &Tensor3, x2: &Tensor3) -> Result<VerificationForward> {
        self.check_input(x1)?;
        self.check_input(x2)?;
        let b1 = self.branch(store, x1);
        let b2 = self.branch(store, x2);
        let merged: Vec<f64> = b1
            .activations
            .iter()
            .zip(&b2.activations)
            .map(|(a, b)| (a - b).abs())
            .collect();
        let score = sigmoid(self.logit(store, &merged));
        Ok(VerificationForward {
            score,
            branches: [b1, b2],
            merged,
        })
    }

    /// Similarity score in (0, 1).
    pub fn forward(&self, store: &ParamStore, x1: &Tensor3, x2: &Tensor3) -> Result<f64> {
        Ok(self.forward_cached(store, x1, x2)?.score)
    }

    /// Score of any image paired with itself: σ(head bias).
    pub fn self_pair_score(&self, store: &ParamStore) -> f64 {
        sigmoid(store.get(self.head.bias)[0])
    }

    /// Gradient w.r.t. each branch's last trunk output, given the gradient
    /// of the loss w.r.t. the head logit. Head and feature-layer parameter
    /// gradients go into `grads` when given.
    fn backward_to_trunk(
        &self,
        store: &ParamStore,
        fwd: &VerificationForward,
        dlogit: f64,
        mut grads: Option<&mut [f64]>,
    ) -> [Tensor3; 2] {
        let g_merged = self
            .head
            .backward(store, &fwd.merged, &[dlogit], grads.as_deref_mut(), true)
            .expect("input grad requested");
        let [b1, b2] = &fwd.branches;
        let mut out = Vec::with_capacity(2);
        for (idx, branch) in [b1, b2].into_iter().enumerate() {
            let other = if idx == 0 { b2 } else { b1 };
            let g_z: Vec<f64> = branch
                .activations
                .iter()
                .zip(&other.activations)
                .zip(&g_merged)
                .map(|((s, o), g)| {
                    let sign = if s > o { 1.0 } else if s < o { -1.0 } else { 0.0 };
                    g * sign * s * (1.0 - s)
                })
                .collect();
            let g_pooled = self
                .features
                .backward(store, &branch.pooled, &g_z, grads.as_deref_mut(), true)
                .expect("input grad requested");
            let last = branch.acts.last().expect("non-empty trunk");
            let grid = self.spec.pool_grid;
            let g_pooled = Tensor3::from_vec(last.channels(), grid, grid, g_pooled).expect("pooled shape");
            out.push(adaptive_avg_pool_backward(&g_pooled, last.height(), last.width()));
        }
        let second = out.pop().expect("two branches");
        let first = out.pop().expect("two branches");
        [first, second]
    }

    /// Accumulates parameter gradients of a loss whose derivative w.r.t.
    /// the head logit is `dlogit`. With `train_trunk == false` the trunk
    /// gradients are skipped (left at zero).
    pub fn backward(
        &self,
        store: &ParamStore,
        x: [&Tensor3; 2],
        fwd: &VerificationForward,
        dlogit: f64,
        grads: &mut [f64],
        train_trunk: bool,
    ) {
        let tops = self.backward_to_trunk(store, fwd, dlogit, Some(grads));
        if train_trunk {
            for (i, top) in tops.into_iter().enumerate() {
                self.trunk
                    .backward(store, x[i], &fwd.branches[i].acts, top, Some(grads), None, false);
            }
        }
    }

    /// Binary cross-entropy of one pair; gradients are added to `grads`.
    pub fn bce_accumulate(
        &self,
        store: &ParamStore,
        x1: &Tensor3,
        x2: &Tensor3,
        label: u8,
        grads: &mut [f64],
        train_trunk: bool,
    ) -> Result<f64> {
        let fwd = self.forward_cached(store, x1, x2)?;
        let y = label as f64;
        let p = fwd.score.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let clamped = fwd.score != p;
        let dlogit = if clamped { 0.0 } else { fwd.score - y };
        self.backward(store, [x1, x2], &fwd, dlogit, grads, train_trunk);
        Ok(loss)
    }

    /// Activation and ∂score/∂activation at trunk layer `layer` for both
    /// branches.
    pub fn layer_gradients(
        &self,
        store: &ParamStore,
        x1: &Tensor3,
        x2: &Tensor3,
        layer: usize,
    ) -> Result<[(Tensor3, Tensor3); 2]> {
        let fwd = self.forward_cached(store, x1, x2)?;
        let dlogit = fwd.score * (1.0 - fwd.score);
        let tops = self.backward_to_trunk(store, &fwd, dlogit, None);
        let mut out = Vec::with_capacity(2);
        for (i, top) in tops.into_iter().enumerate() {
            let x = if i == 0 { x1 } else { x2 };
            let g = self
                .trunk
                .backward(store, x, &fwd.branches[i].acts, top, None, Some(layer), false)
                .expect("layer gradient");
            out.push((fwd.branches[i].acts[layer].clone(), g));
        }
        let second = out.pop().expect("two branches");
        let first = out.pop().expect("two branches");
        Ok([first, second])
    }
}
