use thiserror::Error;

/// Errors produced anywhere in the memory-control stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("{what} out of range: {value} (valid: {valid})")]
    OutOfRange {
        what: &'static str,
        value: String,
        valid: String,
    },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("no tracker entry for t={t}, bank={bank:?}")]
    MissingKey { t: usize, bank: Vec<usize> },

    #[error("state budget of {budget} states exceeded")]
    BudgetExceeded { budget: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("remote error [{code}]: {message}")]
    Remote { code: String, message: String },

    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::OutOfRange { .. }
                | Error::Parse(_)
                | Error::Dimension { .. }
                | Error::MissingKey { .. }
                | Error::Unsupported(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
