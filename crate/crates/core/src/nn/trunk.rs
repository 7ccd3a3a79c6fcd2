//! Convolutional feature extractors shared by both siamese networks.

use serde::{Deserialize, Serialize};

use super::layers::{Activation, Conv2d};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvBlockSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvBlockSpec {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }
}

/// A plain stack of convolution + activation blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrunkSpec {
    pub name: String,
    pub in_channels: usize,
    pub blocks: Vec<ConvBlockSpec>,
    pub activation: Activation,
}

impl TrunkSpec {
    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(self.in_channels, |b| b.out_channels)
    }

    pub fn layer_ids(&self) -> Vec<String> {
        (1..=self.blocks.len()).map(|i| format!("conv{i}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidArgument(format!("trunk `{}` has no blocks", self.name)));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.out_channels == 0 || b.kernel == 0 || b.stride == 0 {
                return Err(Error::InvalidArgument(format!("trunk `{}` block {} has a zero dimension", self.name, i + 1)));
            }
        }
        Ok(())
    }
}

/// Registered trunk layouts.
///
/// * `micro`: two tanh blocks, for gradient checks.
/// * `tiny`: three ReLU blocks, the desk-scale default.
/// * `small`: four ReLU blocks for larger inputs.
pub fn trunk_spec(name: &str) -> Result<TrunkSpec> {
    let (blocks, activation) = match name {
        "micro" => (vec![ConvBlockSpec::new(4, 3, 2, 1), ConvBlockSpec::new(6, 3, 2, 1)], Activation::Tanh),
        "tiny" => (
            vec![
                ConvBlockSpec::new(8, 3, 1, 1),
                ConvBlockSpec::new(16, 3, 2, 1),
                ConvBlockSpec::new(32, 3, 2, 1),
            ],
            Activation::Relu,
        ),
        "small" => (
            vec![
                ConvBlockSpec::new(16, 5, 2, 2),
                ConvBlockSpec::new(32, 3, 2, 1),
                ConvBlockSpec::new(64, 3, 2, 1),
                ConvBlockSpec::new(64, 3, 2, 1),
            ],
            Activation::Relu,
        ),
        _ => {
            return Err(Error::UnknownTrunk {
                name: name.to_owned(),
                valid: registered_trunks().iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    Ok(TrunkSpec {
        name: name.to_owned(),
        in_channels: 3,
        blocks,
        activation,
    })
}

pub fn registered_trunks() -> &'static [&'static str] {
    &["micro", "tiny", "small"]
}

#[derive(Clone, Debug)]
pub struct Trunk {
    spec: TrunkSpec,
    convs: Vec<Conv2d>,
}

impl Trunk {
    pub fn new(spec: &TrunkSpec, store: &mut ParamStore, prefix: &str, rng: &mut Rng) -> Self {
        let mut in_c = spec.in_channels;
        let convs = spec
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let conv = Conv2d::new(
                    store,
                    &format!("{prefix}.conv{}", i + 1),
                    in_c,
                    b.out_channels,
                    b.kernel,
                    b.stride,
                    b.padding,
                    spec.activation.gain(),
                    rng,
                );
                in_c = b.out_channels;
                conv
            })
            .collect();
        Trunk {
            spec: spec.clone(),
            convs,
        }
    }

    pub fn spec(&self) -> &TrunkSpec {
        &self.spec
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    pub fn layer_index(&self, layer_id: &str) -> Result<usize> {
        self.spec
            .layer_ids()
            .iter()
            .position(|l| l == layer_id)
            .ok_or_else(|| Error::UnknownLayer {
                layer: layer_id.to_owned(),
                valid: self.spec.layer_ids(),
            })
    }

    /// Post-activation output of every block, first to last.
    pub fn forward(&self, store: &ParamStore, x: &Tensor3) -> Vec<Tensor3> {
        let mut acts: Vec<Tensor3> = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let input = acts.last().unwrap_or(x);
            let mut y = conv.forward(store, input);
            self.spec.activation.apply(y.data_mut());
            acts.push(y);
        }
        acts
    }

    /// Backpropagates `grad_top` (gradient w.r.t. the last block output).
    ///
    /// Parameter gradients are accumulated when `grads` is given. Returns
    /// the gradient w.r.t. the output of block `stop_at` (0-based) without
    /// going further down, or w.r.t. the input when `stop_at` is `None`
    /// and `need_input_grad` is set.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &Tensor3,
        acts: &[Tensor3],
        grad_top: Tensor3,
        mut grads: Option<&mut [f64]>,
        stop_at: Option<usize>,
        need_input_grad: bool,
    ) -> Option<Tensor3> {
        let mut g = grad_top;
        for i in (0..self.convs.len()).rev() {
            if stop_at == Some(i) {
                return Some(g);
            }
            self.spec.activation.backward(acts[i].data(), g.data_mut());
            let input = if i == 0 { x } else { &acts[i - 1] };
            let want_input = i > 0 || need_input_grad;
            match self.convs[i].backward(store, input, &g, grads.as_deref_mut(), want_input) {
                Some(next) => g = next,
                None => return None,
            }
        }
        need_input_grad.then_some(g)
    }
}
