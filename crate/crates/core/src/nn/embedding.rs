//! Retrieval embedding network.
//!
//! The trunk output is pooled twice (adaptive average and adaptive max,
//! both to a fixed grid), the two results are concatenated along channels,
//! squeezed by a 1×1 convolution, flattened and mapped by two affine
//! layers to a 128-d identity vector. The nonlinearity between the affine
//! layers is the trunk's activation.

use serde::{Deserialize, Serialize};

use super::layers::{
    adaptive_avg_pool, adaptive_avg_pool_backward, adaptive_max_pool, adaptive_max_pool_backward, Conv2d, Linear,
};
use super::params::ParamStore;
use super::trunk::{Trunk, TrunkSpec};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor3;

pub const EMBEDDING_DIM: usize = 128;

/// A 128-d identity vector with finite components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::Shape {
                expected: format!("{EMBEDDING_DIM}-vector"),
                actual: format!("{}-vector", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding has non-finite components".into()));
        }
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        euclidean(&self.0, &other.0)
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingNetSpec {
    pub trunk: TrunkSpec,
    /// Side of both adaptive pooling grids.
    pub pool_size: usize,
    /// Output channels of the 1×1 convolution.
    pub reduce_channels: usize,
    /// Width of the first affine layer.
    pub hidden: usize,
    /// Resolution the network is trained at; inputs of other square sizes
    /// are accepted.
    pub input_resolution: usize,
}

#[derive(Clone, Debug)]
pub struct EmbeddingForward {
    pub acts: Vec<Tensor3>,
    argmax: Vec<usize>,
    concat: Tensor3,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EmbeddingNet {
    spec: EmbeddingNetSpec,
    trunk: Trunk,
    reduce: Conv2d,
    fc1: Linear,
    fc2: Linear,
}

/// Parameters under this prefix form the head trained in the first phase.
pub const HEAD_PREFIX: &str = "head.";

impl EmbeddingNet {
    pub fn new(spec: &EmbeddingNetSpec, seed: u64) -> Result<(Self, ParamStore)> {
        spec.trunk.validate()?;
        if spec.pool_size == 0 || spec.reduce_channels == 0 || spec.hidden == 0 {
            return Err(Error::InvalidArgument("embedding head dimensions must be positive".into()));
        }
        let mut rng = rng_for(seed, &[stream::INIT]);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&spec.trunk, &mut store, "trunk", &mut rng);
        let c = spec.trunk.out_channels();
        let reduce = Conv2d::new(&mut store, "head.reduce", 2 * c, spec.reduce_channels, 1, 1, 0, 1.0, &mut rng);
        let flat = spec.reduce_channels * spec.pool_size * spec.pool_size;
        let fc1 = Linear::new(&mut store, "head.fc1", flat, spec.hidden, 2.0, &mut rng);
        let fc2 = Linear::new(&mut store, "head.fc2", spec.hidden, EMBEDDING_DIM, 1.0, &mut rng);
        Ok((
            EmbeddingNet {
                spec: spec.clone(),
                trunk,
                reduce,
                fc1,
                fc2,
            },
            store,
        ))
    }

    pub fn spec(&self) -> &EmbeddingNetSpec {
        &self.spec
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }

    fn check_input(x: &Tensor3) -> Result<()> {
        if x.channels() != 3 || x.height() != x.width() || x.height() == 0 {
            return Err(Error::Shape {
                expected: "3xRxR".into(),
                actual: x.shape_string(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, store: &ParamStore, x: &Tensor3) -> Result<EmbeddingForward> {
        Self::check_input(x)?;
        let acts = self.trunk.forward(store, x);
        let top = acts.last().expect("non-empty trunk");
        let p = self.spec.pool_size;
        let avg = adaptive_avg_pool(top, p);
        let (max, argmax) = adaptive_max_pool(top, p);
        let mut cat = avg.into_vec();
        cat.extend_from_slice(max.data());
        let concat = Tensor3::from_vec(2 * top.channels(), p, p, cat)?;
        let flat = self.reduce.forward(store, &concat).into_vec();
        let mut hidden = self.fc1.forward(store, &flat);
        self.spec.trunk.activation.apply(&mut hidden);
        let output = self.fc2.forward(store, &hidden);
        Ok(EmbeddingForward {
            acts,
            argmax,
            concat,
            flat,
            hidden,
            output,
        })
    }

    pub fn embed(&self, store: &ParamStore, x: &Tensor3) -> Result<Embedding> {
        Embedding::new(self.forward_cached(store, x)?.output)
    }

    /// Accumulates parameter gradients for `grad_output` = ∂loss/∂embedding.
    /// Trunk gradients are skipped unless `train_trunk`.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &Tensor3,
        fwd: &EmbeddingForward,
        grad_output: &[f64],
        grads: &mut [f64],
        train_trunk: bool,
    ) {
        let mut g_hidden = self
            .fc2
            .backward(store, &fwd.hidden, grad_output, Some(grads), true)
            .expect("input grad requested");
        self.spec.trunk.activation.backward(&fwd.hidden, &mut g_hidden);
        let g_flat = self
            .fc1
            .backward(store, &fwd.flat, &g_hidden, Some(grads), true)
            .expect("input grad requested");
        let p = self.spec.pool_size;
        let g_reduced = Tensor3::from_vec(self.spec.reduce_channels, p, p, g_flat).expect("reduce shape");
        let g_concat = self
            .reduce
            .backward(store, &fwd.concat, &g_reduced, Some(grads), train_trunk);
        if !train_trunk {
            return;
        }
        let g_concat = g_concat.expect("input grad requested");
        let top = fwd.acts.last().expect("non-empty trunk");
        let c = top.channels();
        let half = c * p * p;
        let g_avg = Tensor3::from_vec(c, p, p, g_concat.data()[..half].to_vec()).expect("pool shape");
        let g_max = Tensor3::from_vec(c, p, p, g_concat.data()[half..].to_vec()).expect("pool shape");
        let mut g_top = adaptive_avg_pool_backward(&g_avg, top.height(), top.width());
        let g_top_max = adaptive_max_pool_backward(&g_max, &fwd.argmax, top.height(), top.width());
        for (a, b) in g_top.data_mut().iter_mut().zip(g_top_max.data()) {
            *a += b;
        }
        self.trunk.backward(store, x, &fwd.acts, g_top, Some(grads), None, false);
    }
}
