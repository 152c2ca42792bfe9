//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("loss must be a scalar (single element), got {len} elements")]
    NotScalarLoss { len: usize },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("operation requires phase {expected}, but phase is {got}")]
    PhaseMismatch { expected: String, got: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {got} unsupported (expected {expected})")]
    CheckpointVersion { expected: u32, got: u32 },

    #[error("layer {0:?} not found")]
    LayerNotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
