use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum SwivelError {
    /// Invalid configuration or arguments (bad hyperparameters, zero-sized
    /// requests, out-of-range indices).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (corrupt files, id ranges,
    /// shape mismatches between artifacts).
    #[error("data error: {0}")]
    Data(String),

    /// A numerical failure during training (non-finite loss or parameter).
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl SwivelError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        SwivelError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SwivelError>;
