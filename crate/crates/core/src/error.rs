use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the workbench.
///
/// `Validation` covers bad user input (exit code 2 from the CLI); everything
/// else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("unsupported bit depth {0} (only 8-bit PNGs are accepted)")]
    UnsupportedBitDepth(u8),

    #[error("empty image")]
    EmptyImage,

    #[error("malformed PNG {path}: {detail}")]
    Png { path: PathBuf, detail: String },

    #[error("malformed weights file: {0}")]
    Weights(String),

    #[error("Gaussian-process kernel matrix is not positive definite even with jitter {0:e}")]
    NotPositiveDefinite(f64),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("bit depth {depth}: {source}")]
    AtDepth {
        depth: u8,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by invalid user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_)
            | Error::UnsupportedBitDepth(_)
            | Error::EmptyImage
            | Error::Shape(_) => true,
            Error::AtDepth { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
