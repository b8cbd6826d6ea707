use std::path::PathBuf;

use nalgebra::DMatrix;
use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A state left the domain where the hemodynamic equations are defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration failed at step {step}: {reason}")]
    Integration { step: usize, reason: String },

    #[error("matrix is not stable: {0}")]
    Unstable(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The optimizer could not make progress; `best` is the best stable iterate seen.
    #[error("optimizer failure: {reason}")]
    Optimizer {
        reason: String,
        best: Option<DMatrix<f64>>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
