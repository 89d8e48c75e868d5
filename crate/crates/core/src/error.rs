//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/geometry shape mismatch, naming both offending shapes.
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// Binary/text format problem with the location that produced it.
    #[error("format error in {path}: {msg} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("calibration file {path} is missing key {key:?}")]
    MissingCalibKey { path: PathBuf, key: String },

    #[error("config error: {0}")]
    Config(String),

    /// A training stage was started without its prerequisite checkpoint.
    #[error("stage '{stage}' requires a checkpoint from stage '{missing}'")]
    StageDependency { stage: String, missing: String },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    /// Evaluation inputs that cannot be matched one-to-one.
    #[error("alignment error; orphans: {orphans:?}")]
    Alignment { orphans: Vec<String> },

    #[error("{path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::IoAt { path, source }
    }
}
