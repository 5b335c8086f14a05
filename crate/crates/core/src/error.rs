use std::path::PathBuf;

use thiserror::Error;

use crate::train::DivergedState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} is outside the domain: {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("non-finite value in layer {layer}")]
    NonFiniteLayer { layer: usize },

    #[error("non-finite {what} at component {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        state: Option<Box<DivergedState>>,
    },

    #[error("CFL violation: courant number {courant} exceeds {limit}")]
    Cfl { courant: f64, limit: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    Mismatch(String),

    #[error("malformed {kind} file {path}: {reason}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(kind: &'static str, path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Stable machine-readable category, used for CLI exit codes and the C ABI.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Domain { .. } | Error::Shape(_) | Error::Mismatch(_) => {
                ErrorCategory::InvalidInput
            }
            Error::NonFiniteLayer { .. } | Error::NonFinite { .. } | Error::Diverged { .. } | Error::Cfl { .. } => {
                ErrorCategory::Numerical
            }
            Error::Format { .. } | Error::Csv(_) | Error::Json(_) => ErrorCategory::Format,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    InvalidInput,
    Numerical,
    Format,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::InvalidInput => "invalid-input",
            ErrorCategory::Numerical => "numerical",
            ErrorCategory::Format => "format",
            ErrorCategory::Io => "io",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::InvalidInput => 2,
            ErrorCategory::Numerical => 3,
            ErrorCategory::Format => 4,
            ErrorCategory::Io => 5,
        }
    }
}
