use std::fmt::Display;
use std::path::Path;
use std::process::ExitCode;

use thiserror::Error;

/// Failure classes, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid data: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
        })
    }

    pub fn io(path: &Path, err: impl Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn parse(path: &Path, err: impl Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    /// Classifies a core error raised while processing `path`.
    pub fn at(path: &Path, err: pensieve_core::Error) -> Self {
        if err.is_io() {
            CliError::io(path, err)
        } else {
            CliError::parse(path, err)
        }
    }
}

impl From<pensieve_core::Error> for CliError {
    fn from(err: pensieve_core::Error) -> Self {
        if err.is_io() {
            CliError::Io(err.to_string())
        } else {
            CliError::Data(err.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
