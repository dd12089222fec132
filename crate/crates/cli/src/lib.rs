//! Library behind the `mifr` binary: configuration loading, run
//! directories, sweeps, the multiplier-doubling driver, evaluation and
//! figure-data export.

pub mod config;
pub mod report;
pub mod run;
pub mod sweep;
pub mod tune;

use mifr_core::Error;

pub use config::{DatasetKind, RunConfig};

/// Exit codes: 0 success, 1 internal error, 2 user or configuration error.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidInput(_)
            | Error::Data(_)
            | Error::MissingData { .. }
            | Error::Schema(_)
            | Error::Checkpoint(_)
            | Error::Csv(_)
            | Error::Empty(_) => CliError::Usage(msg),
            _ => CliError::Internal(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}
