//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands with incompatible shapes; names both so the caller can see what clashed.
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {op}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("invalid parameter {name}={value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's contract (e.g. non-scalar loss node).
    #[error("contract violation in {op}: {reason}")]
    Contract { op: &'static str, reason: String },

    /// NaN/Inf surfaced where only finite values are allowed; aborts the step.
    #[error("non-finite value produced in {context}")]
    NonFinite { context: String },

    #[error("internal invariant violated: {0}")]
    Internal(String),

    /// Truncated or missing dataset file; offset points at the first bad byte.
    #[error("{path}: {reason} (byte offset {offset})")]
    Ingestion {
        path: PathBuf,
        reason: String,
        offset: u64,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
