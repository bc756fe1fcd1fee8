//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Optimization produced a non-finite loss.
    #[error("fit failure: {reason} (target {target}, epoch {epoch}, seed {seed})")]
    FitFailure {
        target: String,
        epoch: usize,
        seed: u64,
        reason: String,
    },

    /// A spiking operation was requested but its approximator is absent.
    #[error("not fitted: {0}")]
    NotFitted(String),

    /// Conversion found a site without calibration coverage.
    #[error("conversion error: no calibration coverage for site {site}")]
    ConversionError { site: String },

    /// Tensor or spike-train shapes do not conform.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A store document declares a format this build does not understand.
    #[error("unsupported format version {found} (this build supports <= {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    /// A store document's kind does not match its payload.
    #[error("malformed store document: {0}")]
    MalformedDocument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
