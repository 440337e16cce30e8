use thiserror::Error;

/// Errors raised across the unfolding pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnfoldError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("response matrix is numerically singular (condition estimate {condition:.3e})")]
    SingularResponse { condition: f64 },

    #[error("truth bin {bin} of the response sample is empty")]
    EmptyTruthBin { bin: usize },

    #[error("capacity exceeded: {what} needs {required}, limit is {limit}")]
    Capacity {
        what: &'static str,
        required: usize,
        limit: usize,
    },

    #[error("too many failed toys: {failed} of {total}")]
    BootstrapFailed { failed: usize, total: usize },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl UnfoldError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    /// Short machine-readable tag, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidInput(_) => "invalid_input",
            Self::DimensionMismatch { .. } => "dimension_mismatch",
            Self::SingularResponse { .. } => "singular_response",
            Self::EmptyTruthBin { .. } => "empty_truth_bin",
            Self::Capacity { .. } => "capacity",
            Self::BootstrapFailed { .. } => "bootstrap_failed",
            Self::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, UnfoldError>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(UnfoldError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}
