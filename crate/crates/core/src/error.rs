use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument fell outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration (bad sizes, empty mixtures, inconsistent lengths...).
    #[error("config error: {0}")]
    Config(String),

    /// A score evaluation or loss produced NaN/inf.
    #[error("non-finite value at sigma={sigma:e} (t={t:.6}): {what}")]
    NonFinite { what: String, sigma: f64, t: f64 },

    /// The sampling recursion left the finite reals.
    #[error("non-finite iterate at sampling step n={step}")]
    NonFiniteIterate { step: usize },

    /// Training loss became NaN/inf.
    #[error("non-finite training loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    /// API misuse, e.g. backward without a cached forward pass.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A distortion in a chain failed; carries the chain position.
    #[error("distortion #{index} ({kind}) failed: {source}")]
    Distortion {
        index: usize,
        kind: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Coarse category, used by the CLI to pick an exit code.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Domain(_) | Error::Config(_) | Error::Usage(_) => ErrorCategory::Config,
            Error::NonFinite { .. }
            | Error::NonFiniteIterate { .. }
            | Error::NonFiniteLoss { .. }
            | Error::UndefinedMetric(_) => ErrorCategory::Numeric,
            Error::Format { .. } | Error::Wav(_) | Error::Io(_) | Error::Json(_) => {
                ErrorCategory::Io
            }
            Error::Distortion { source, .. } => source.category(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Numeric,
}
