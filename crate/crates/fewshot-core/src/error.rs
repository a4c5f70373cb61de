//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by the tensor core, data pipeline, models, and training.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Shape or dimension mismatch between tensors.
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    /// An operation produced NaN or Inf.
    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },

    /// Invalid configuration value.
    #[error("config: {0}")]
    Config(String),

    /// A split or class cannot supply the requested number of samples.
    #[error("capacity: {0}")]
    Capacity(String),

    /// Dataset directory layout violation.
    #[error("layout: {0}")]
    Layout(String),

    /// An image file could not be decoded.
    #[error("decode {path}: {msg}")]
    Decode { path: String, msg: String },

    /// Stateful component used before initialization, or a missing gradient.
    #[error("state: {0}")]
    State(String),

    /// Gradient or oracle verification failure.
    #[error("verification: {0}")]
    Verification(String),

    /// Checkpoint serialization or validation failure.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Filesystem failure with the offending path.
    #[error("io {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
