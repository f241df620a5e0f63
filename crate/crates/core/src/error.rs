use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image is {width}x{height}; watermarking needs both dimensions to be multiples of {multiple}")]
    Divisibility {
        width: usize,
        height: usize,
        multiple: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("region out of bounds: {0}")]
    OutOfBounds(String),

    #[error("mask selects no blocks")]
    EmptyMask,

    #[error("ground truth must contain both tampered and untampered blocks")]
    DegenerateTruth,

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
