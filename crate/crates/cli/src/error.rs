use std::path::Path;

use ngarch::Error;
use thiserror::Error as ThisError;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }

    /// 2 for configuration and input validation, 3 for numeric failure,
    /// 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::Domain(_)
                | Error::NotPositiveDefinite { .. }
                | Error::NotPositiveDefiniteAt { .. }
                | Error::NonPositiveVariance(_)
                | Error::DegreesOfFreedomTooSmall(_)
                | Error::OptimizerDiverged(_)
                | Error::NonFiniteLoss { .. } => 3,
                Error::Io(_) => 1,
                _ => 2,
            },
            CliError::Io { .. } => 1,
        }
    }
}
