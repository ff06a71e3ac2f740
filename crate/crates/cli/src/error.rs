use std::path::Path;

use thiserror::Error;

/// A failed command. Each variant maps to a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("missing {artifact}: run `riskscope {command}` first")]
    MissingUpstream { artifact: String, command: &'static str },
    #[error("{0}")]
    Geo(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Schema(_) => 3,
            CliError::Degenerate(_) => 4,
            CliError::MissingUpstream { .. } => 5,
            CliError::Geo(_) => 6,
        }
    }

    pub fn parse(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Parse(format!("{}: {e}", path.display()))
    }

    pub fn schema(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Schema(format!("{}: {e}", path.display()))
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

pub type CliResult<T> = Result<T, CliError>;
