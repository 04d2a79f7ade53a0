//! Command-line harness: train, evaluate, sweep, verify and plot.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical or I/O failure
//! during a run, 3 a verification check failed.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod plot;

pub use commands::{run_eval, run_sweep, run_train, run_verify, SweepRow, TrainOutcome};
pub use config::{Preset, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Runtime(cepo_core::Error),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::Io(_) => 2,
            CliError::Verify(_) => 3,
        }
    }
}

impl From<cepo_core::Error> for CliError {
    fn from(e: cepo_core::Error) -> Self {
        use cepo_core::Error as E;
        match e {
            E::InvalidConfig(_) | E::UnknownEnv(_) | E::Checkpoint(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}
