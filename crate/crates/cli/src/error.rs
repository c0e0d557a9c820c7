use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0} check(s) failed")]
    ChecksFailed(usize),

    #[error(transparent)]
    Core(#[from] kacflow_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 pass, 1 check failure, 2 config or usage error, 3 internal error.
    pub fn exit_code(&self) -> u8 {
        use kacflow_core::Error as E;
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(E::Config(_) | E::Param(_) | E::Checkpoint(_)) => 2,
            CliError::Core(_) | CliError::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
