use std::fmt::Display;
use std::path::{Path, PathBuf};

/// Failure of a CLI command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or input data (exit code 1).
    #[error("{0}")]
    Validation(String),
    /// Numerical or other failure while computing (exit code 2).
    #[error("{0}")]
    Runtime(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) | Self::Io { .. } => 2,
        }
    }
}

pub fn invalid(msg: impl Display) -> CliError {
    CliError::Validation(msg.to_string())
}

pub fn runtime(msg: impl Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

pub fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
