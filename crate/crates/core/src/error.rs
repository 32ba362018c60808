use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fitting pipeline.
#[derive(Debug, Error)]
pub enum LorsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Computation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Coarse failure class, used for process exit codes and machine-readable error reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Numerical,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Numerical => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Io => "io",
            ErrorCategory::Numerical => "numerical",
        }
    }
}

impl LorsError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            LorsError::InvalidArgument(_) => ErrorCategory::Config,
            LorsError::Computation(_) => ErrorCategory::Numerical,
            LorsError::Io { .. } | LorsError::Parse { .. } => ErrorCategory::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LorsError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, LorsError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LorsError {
    LorsError::InvalidArgument(msg.into())
}
