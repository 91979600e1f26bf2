use std::io;

use thiserror::Error;

/// Errors produced by the splatting engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("unsupported format variant: {0}")]
    UnsupportedVariant(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("gaussian culled: view-space depth {depth} is behind the near plane")]
    CulledBehindCamera { depth: f64 },
    #[error("non-finite value in {term}")]
    NonFinite { term: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
