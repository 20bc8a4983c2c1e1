//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, EtdError>;

#[derive(Debug, thiserror::Error)]
pub enum EtdError {
    /// Vector/matrix dimensions do not line up.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An argument violates a precondition (non-finite input, invalid
    /// distribution, out-of-range index, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration file or key is malformed.
    #[error("config error: {0}")]
    Config(String),

    /// A buffer violates a structural invariant (inconsistent masks or gaps).
    #[error("structural error: {0}")]
    Structural(String),

    /// Every entry of a batch is masked out; the update must be skipped.
    #[error("degenerate batch: all {0} entries masked")]
    DegenerateBatch(usize),

    /// Backward called without a recorded forward pass.
    #[error("usage error: {0}")]
    Usage(String),

    /// A checkpoint file is malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at update {update}: {detail}")]
    NonFiniteLoss { update: usize, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EtdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EtdError::Io {
            path: path.into(),
            source,
        }
    }
}
