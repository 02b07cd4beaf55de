//! Command-line front end for minlearn experiments.
//!
//! Every command writes its report to a caller-supplied writer and returns
//! an exit code: 0 for success, 1 for a semantic failure (a condition
//! fails, an agent never converges, a run aborts). Usage and parse errors
//! come back as [`CliError`] and map to exit code 2.

pub mod commands;
pub mod config;

pub use commands::{cmd_analyze, cmd_check, cmd_simulate, cmd_source_sets, SimulateOverrides};
pub use config::{load_experiment, Experiment, ExperimentFile, InclusiveRange, SCHEMA_VERSION};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input files.
    #[error("{0}")]
    Usage(String),
    /// Failure writing the report itself.
    #[error("output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        EXIT_USAGE
    }
}
