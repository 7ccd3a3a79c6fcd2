//! Siamese networks with hand-written backward passes.

pub mod checkpoint;
pub mod embedding;
pub mod gradcam;
pub mod layers;
pub mod params;
pub mod trunk;
pub mod verification;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use embedding::{Embedding, EmbeddingNet, EmbeddingNetSpec, EMBEDDING_DIM};
pub use gradcam::{grad_cam, AttentionMap};
pub use params::ParamStore;
pub use trunk::{registered_trunks, trunk_spec, TrunkSpec};
pub use verification::{VerificationNet, VerificationNetSpec};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Verification(VerificationNetSpec),
    Embedding(EmbeddingNetSpec),
}

impl ModelSpec {
    pub fn spec_id(&self) -> String {
        match self {
            ModelSpec::Verification(s) => format!("verification/{}", s.trunk.name),
            ModelSpec::Embedding(s) => format!("embedding/{}", s.trunk.name),
        }
    }

    pub fn input_resolution(&self) -> usize {
        match self {
            ModelSpec::Verification(s) => s.input_resolution,
            ModelSpec::Embedding(s) => s.input_resolution,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    Verification(VerificationNet),
    Embedding(EmbeddingNet),
}

impl Model {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<(Model, ParamStore)> {
        Ok(match spec {
            ModelSpec::Verification(s) => {
                let (m, p) = VerificationNet::new(s, seed)?;
                (Model::Verification(m), p)
            }
            ModelSpec::Embedding(s) => {
                let (m, p) = EmbeddingNet::new(s, seed)?;
                (Model::Embedding(m), p)
            }
        })
    }
}
