//! Pipeline behind the `dcaccel` binary: density approximation, filter
//! design, filter comparison and the invariant suite.

pub mod cache;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod validate;

use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] dcaccel_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(dcaccel_core::Error::Parse(e.to_string()))
    }
}
