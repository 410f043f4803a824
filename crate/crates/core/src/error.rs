use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("embedding dimension must be at least 1")]
    ZeroDimension,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("query y-part must be identically zero")]
    NonzeroQueryY,

    #[error("layer index {index} out of range 1..={layers}")]
    LayerOutOfRange { index: usize, layers: usize },

    #[error("network must have at least one layer")]
    EmptyNetwork,

    #[error("rho must be positive and finite, got {0}")]
    InvalidRho(f64),

    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),

    #[error("expected exactly one demonstration, found {0}")]
    NotOneShot(usize),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate demonstration id {0:?}")]
    DuplicateId(String),

    #[error("stale index: {0}")]
    StaleIndex(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged {
        step: usize,
        loss: f64,
        losses: Vec<f64>,
    },

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// True for the dimension-agreement family of failures.
    pub fn is_dimension(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. } | Error::ZeroDimension
        )
    }
}
