use std::fmt;

use langevin_core::Error as CoreError;

/// Failure of a subcommand, mapped onto a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("assumption: {0}")]
    Assumption(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("io: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Assumption(_) => 2,
            HarnessError::Divergence(_) => 3,
            HarnessError::Io(_) => 1,
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        HarnessError::Config(msg.to_string())
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Divergence { .. } | CoreError::NonFinite(_) => HarnessError::Divergence(e.to_string()),
            _ => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Config(e.to_string())
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

/// Exit code for a check whose acceptance threshold was not met.
pub const EXIT_THRESHOLD: i32 = 4;
