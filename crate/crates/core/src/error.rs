use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("index error in {op}: index {index} out of range 0..{bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("non-finite value produced by {op}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite {
        op: &'static str,
        step: Option<usize>,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGrad(String),

    #[error("training diverged: loss is {loss} at epoch {epoch}, batch {batch} (lr {lr})")]
    Diverged {
        epoch: usize,
        batch: usize,
        lr: f64,
        loss: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Dimension { .. } | Error::Index { .. } | Error::Contract(_) => {
                ErrorCategory::Contract
            }
            Error::NonFinite { .. } | Error::NonFiniteGrad(_) | Error::Diverged { .. } => {
                ErrorCategory::Numeric
            }
            Error::Config(_) => ErrorCategory::Config,
            Error::Parse { .. } | Error::Checkpoint(_) | Error::Json(_) => ErrorCategory::Data,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Io,
    Numeric,
    Contract,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
