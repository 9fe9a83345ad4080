//! Library half of the `stmle` command-line tool: configuration, CSV
//! ingestion, the `simulate` / `analyze` / `selftest` commands and their
//! report types. `main.rs` only parses flags and maps errors to exit codes.

pub mod analyze;
pub mod config;
pub mod ingest;
pub mod report;
pub mod selftest;
pub mod simulate;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{AnalysisConfig, ColumnTransform, Config, SimulateConfig};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input data; exit code 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// Failure while running; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub(crate) fn from_csv(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}

/// Options shared by every command.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Replaces every seed in the configuration when set.
    pub seed: Option<u64>,
    pub diagnostics: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            seed: None,
            diagnostics: false,
        }
    }

    pub(crate) fn prepare(&self) -> Result<&Path, CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", self.out_dir.display())))?;
        Ok(&self.out_dir)
    }
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
