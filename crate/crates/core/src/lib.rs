//! Patient verification and re-identification on chest radiographs.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! * [`catalog`] ingests image manifests, splits them patient-wise and
//!   preprocesses rasters into network inputs.
//! * [`mining`] builds labeled image pairs, offline for verification and
//!   online (with a cross-batch memory) for retrieval training.
//! * [`nn`] holds the two siamese networks, their hand-written backward
//!   passes, Grad-CAM and the checkpoint container.
//! * [`train`] implements the losses, schedules, optimizers and both
//!   training loops.
//! * [`metrics`] computes ROC/AUC with bootstrap intervals, thresholded
//!   confusion statistics, retrieval precision and robustness binning.
//! * [`attack`] ranks a gallery against a query radiograph and reports how
//!   often the identity is recovered.
//! * [`synthetic`] renders procedural identities so every stage can be
//!   exercised without clinical data.
//! * [`experiment`] ties everything into config-driven runs.

pub mod attack;
pub mod catalog;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mining;
pub mod nn;
pub mod par;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use nn::embedding::{Embedding, EMBEDDING_DIM};
pub use tensor::Tensor3;
