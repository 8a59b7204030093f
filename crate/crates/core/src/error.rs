use thiserror::Error;

/// Errors raised by model construction, EM runs and the rate estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model specification: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The M-step linear system stayed singular after one jitter retry.
    #[error("singular system{}: {detail}", iteration.map(|t| format!(" at EM iteration {t}")).unwrap_or_default())]
    SingularSystem {
        iteration: Option<usize>,
        detail: String,
    },

    /// The rate fit window held fewer than three points.
    #[error("too few points to fit a rate: {points} in the decay window (need at least 3)")]
    TooFewPoints { points: usize },

    /// A closed-form bound was requested outside the regime where it holds.
    #[error("out of regime: {0}")]
    OutOfRegime(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Numerical failures (as opposed to invalid input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::SingularSystem { .. } | Error::TooFewPoints { .. })
    }

    pub(crate) fn at_iteration(self, t: usize) -> Self {
        match self {
            Error::SingularSystem { detail, .. } => Error::SingularSystem {
                iteration: Some(t),
                detail,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
