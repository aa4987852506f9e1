//! Experiment runner: reads a TOML config, runs solve, simulate, search,
//! verify or export-regions jobs over a parameter sweep, and writes CSV
//! artifacts tagged with the config hash.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::{cmd_export_regions, cmd_search, cmd_simulate, cmd_solve, cmd_verify, Options};
pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{0}")]
    Io(String),

    #[error("missing policy artifact: {0}")]
    MissingArtifact(String),

    #[error("{label}: value iteration did not converge after {iterations} iterations, residual {residual:e}")]
    NonConvergence {
        label: String,
        iterations: usize,
        residual: f64,
    },

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    /// 1 for bad input, 2 for non-convergence, 3 for failed checks.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) | CliError::MissingArtifact(_) => 1,
            CliError::NonConvergence { .. } => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
