use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants are grouped so that callers (and the CLI exit codes) can tell
/// configuration mistakes from bad data and from numerical breakdowns.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("parameter domain error: {0}")]
    Domain(String),

    #[error("thin-plate spline fit failed: {0}")]
    TpsFit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("whitening state mismatch: {0}")]
    Whitening(&'static str),

    #[error("{path}: bad file format: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: missing input ({hint})")]
    MissingInput { path: PathBuf, hint: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status for the command-line tool: 2 for configuration,
    /// 3 for data, 4 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Degenerate(_)
            | Error::Dimension { .. }
            | Error::Domain(_)
            | Error::Whitening(_)
            | Error::Format { .. }
            | Error::MissingInput { .. } => 3,
            Error::TpsFit(_) | Error::Numerical(_) => 4,
            Error::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(expected: usize, actual: usize, context: &'static str) -> Self {
        Error::Dimension {
            expected,
            actual,
            context,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
