use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes for an operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A softmax row with no valid (unmasked) entries.
    #[error("masked softmax: row {row} has no valid entries")]
    DegenerateRow { row: usize },

    /// A violated API precondition (wrong arity, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value or combination.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input data, with file and 1-based line number.
    #[error("{path}:{line}: {msg}", path = .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Checkpoint does not match the requested configuration.
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    /// Failure during training or evaluation (NaN loss, ...).
    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage/config/input errors,
    /// 1 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Checkpoint(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
