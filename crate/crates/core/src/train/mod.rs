//! Training loops for both network families.

pub mod loss;
pub mod optim;
pub mod reid;
pub mod schedule;
pub mod state;
pub mod verification;

pub use loss::{bce_batch, bce_loss, contrastive_batch, contrastive_loss};
pub use optim::{Adam, Sgd};
pub use reid::{embed_manifest, retrieval_training_set, train_reid, ReidTrainConfig};
pub use schedule::one_cycle_lr;
pub use state::{early_stop_check, early_stop_check_with, EpochRecord, Goal, TrainState};
pub use verification::{evaluate_pairs, score_pairs, train_verification, Monitor, VerifTrainConfig};
