//! Run-configuration handling and the `funnel`, `train`, `eval` and `monitor` commands.
//!
//! Every command reads one JSON run configuration and writes its artifacts under the
//! configured output directory.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::{cmd_eval, cmd_funnel, cmd_monitor, cmd_train};
pub use config::{prepare, Prepared, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}
