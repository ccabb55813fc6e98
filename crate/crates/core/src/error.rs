use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("input not found: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("{}:{line}: malformed record: {reason}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("readability undefined: {0}")]
    Undefined(&'static str),

    #[error("holdout of {requested} records requested but only {available} survived filtering")]
    HoldoutTooLarge { requested: usize, available: usize },

    #[error("backend error for {item} after {attempts} attempt(s): {message}")]
    Backend {
        item: String,
        attempts: u32,
        message: String,
    },

    #[error("no object crops above threshold (real: {real}, generated: {generated})")]
    ZeroCrops { real: usize, generated: usize },

    #[error("every manifest row was dropped ({dropped} over the token limit, {skipped} missing a source)")]
    AllRowsDropped { dropped: usize, skipped: usize },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Errors caused by bad user input (flags, config, data files) rather
    /// than by a failure while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingInput(_)
                | Error::Malformed { .. }
                | Error::Invalid(_)
                | Error::DimMismatch { .. }
                | Error::HoldoutTooLarge { .. }
                | Error::Json { .. }
        )
    }
}
