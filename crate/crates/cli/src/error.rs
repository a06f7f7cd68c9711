use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::CheckpointError;

/// Process exit status for a successful command.
pub const EXIT_OK: u8 = 0;
/// A run failed or a verification check did not pass.
pub const EXIT_FAILURE: u8 = 1;
/// The configuration or command line could not be used.
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] mhd_core::Error),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(
        "run directory {0} is locked by another process (remove the .lock file if it is stale)"
    )]
    Locked(PathBuf),

    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },

    #[error("malformed run directory: {0}")]
    RunDir(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code written to JSON summaries.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config_error",
            CliError::Core(e) => e.code(),
            CliError::Checkpoint(e) => e.code(),
            CliError::Io { .. } => "io_error",
            CliError::Locked(_) => "run_dir_locked",
            CliError::ChecksFailed { .. } => "checks_failed",
            CliError::RunDir(_) => "malformed_run_dir",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(mhd_core::Error::InvalidGrid(_) | mhd_core::Error::InvalidParams(_)) => {
                EXIT_CONFIG
            }
            _ => EXIT_FAILURE,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
