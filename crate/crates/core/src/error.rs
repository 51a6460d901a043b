use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("zero-variance continuous column `{0}`")]
    ZeroVariance(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} is not positive definite; increase the ridge (current ridge {ridge:e})")]
    NotPositiveDefinite { what: String, ridge: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("logistic fit diverged (coefficient norm {norm:.3e} after {iterations} iterations); check for separating covariates")]
    Separation { norm: f64, iterations: usize },

    #[error("numerical overflow: {0}")]
    Overflow(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Config,
            Error::Io { .. }
            | Error::Csv { .. }
            | Error::InvalidData(_)
            | Error::ZeroVariance(_)
            | Error::Shape(_) => ErrorClass::Data,
            Error::NotPositiveDefinite { .. }
            | Error::Singular(_)
            | Error::Separation { .. }
            | Error::Overflow(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
