//! Command implementations behind the `seqmot` binary. Each command is a
//! plain function so tests and scripts can drive it without a subprocess.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::*;
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<seqmot_core::Error> for CliError {
    fn from(e: seqmot_core::Error) -> Self {
        use seqmot_core::Error as E;
        use seqmot_tensor::TensorError as T;
        match e {
            E::Tensor(T::Checkpoint(_) | T::Io(_)) => CliError::Data(e.to_string()),
            E::Divergence { .. } | E::NonFinite(_) | E::Tensor(_) => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
