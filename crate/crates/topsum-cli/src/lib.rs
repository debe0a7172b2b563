//! Library half of the `topsum` binary: argument definitions, config-file
//! resolution, and the command implementations. The binary in `main.rs`
//! only parses and dispatches, so integration tests can reach everything
//! here directly.

use thiserror::Error;

pub mod args;
pub mod cmd;
pub mod config;

/// Command failures, split by exit code: validation problems (bad flags,
/// unreadable inputs, mismatched artifacts) exit 1; failures after work
/// has started exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> CliError {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(msg.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}
