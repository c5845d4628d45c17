//! Experiment runner for the `lpvarpro` solvers: flat `key=value`
//! configurations and named presets, instance archives, and CSV / graymap
//! output.

pub mod archive;
pub mod config;
pub mod io;
pub mod run;

pub use config::{preset, ExperimentConfig, Overrides, PRESETS};
pub use run::{run_experiment, RunSummary};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Invalid configuration, unknown preset, or a malformed value.
    #[error("configuration error: {0}")]
    Config(String),
    /// An input file is missing or unreadable.
    #[error("cannot read {path}: {msg}")]
    Input { path: PathBuf, msg: String },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] lpvarpro::Error),
}

impl HarnessError {
    /// Process exit code: 1 for configuration and input problems, 2 for
    /// failures while solving or writing results.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Input { .. } => 1,
            HarnessError::Solver(lpvarpro::Error::Config(_)) => 1,
            HarnessError::Output { .. } | HarnessError::Solver(_) => 2,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        HarnessError::Input {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
