use std::path::PathBuf;

use thiserror::Error;

use crate::train::TrainState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest is missing required column `{column}`")]
    MissingColumn { column: String },

    #[error("manifest row {row}: {message}")]
    BadRecord { row: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot load image {path}: {message}")]
    ImageLoad { path: PathBuf, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("unknown layer `{layer}`; valid layers: {}", valid.join(", "))]
    UnknownLayer { layer: String, valid: Vec<String> },

    #[error("unknown trunk `{name}`; registered trunks: {}", valid.join(", "))]
    UnknownTrunk { name: String, valid: Vec<String> },

    #[error("pair mining: {0}")]
    Mining(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence {
        epoch: usize,
        step: usize,
        loss: f64,
        state: Box<TrainState>,
    },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}
