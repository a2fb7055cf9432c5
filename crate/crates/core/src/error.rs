//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or vector argument violated a precondition.
    #[error("invalid argument `{name}`: {reason} (got {value})")]
    InvalidArgument {
        name: &'static str,
        value: String,
        reason: String,
    },

    /// Two objects that must agree in dimension do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// Cholesky factorization failed even after the jitter ladder.
    #[error(
        "covariance factorization failed after jitter ladder {attempted:?}; \
         offending parameters: {context}"
    )]
    Factorization {
        /// Every diagonal nugget that was tried, in order.
        attempted: Vec<f64>,
        context: String,
    },

    /// A data file failed validation on ingestion.
    #[error("ingestion error in {path}: {reason}")]
    Ingestion { path: String, reason: String },

    /// Configuration file or flag combination is unusable.
    #[error("config error: {0}")]
    Config(String),

    /// Summaries requested on an empty chain.
    #[error("chain is empty; nothing to summarize")]
    EmptyChain,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(name: &'static str, value: impl std::fmt::Display, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            value: value.to_string(),
            reason: reason.into(),
        }
    }

    pub fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    /// Process exit code used by the CLI: 2 for validation problems,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Factorization { .. } => 3,
            _ => 2,
        }
    }
}
