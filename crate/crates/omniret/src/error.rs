use std::io;
use std::path::Path;

/// Errors surfaced by file handling and the command-line tool.
///
/// Each variant maps to a process exit code: validation problems (bad input
/// data, bad flags, malformed files) exit 1, filesystem failures exit 2 and
/// broken internal invariants exit 3.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] omniret_core::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        AppError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<Path>, line: usize, message: impl Into<String>) -> Self {
        AppError::Parse {
            path: path.as_ref().display().to_string(),
            line,
            message: message.into(),
        }
    }

    pub fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        AppError::Format {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Io { .. } => 2,
            AppError::Internal(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
