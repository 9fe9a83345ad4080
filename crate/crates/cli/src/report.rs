//! Report documents written by the commands. Every JSON document carries a
//! `kind` tag and validates against `schema/report.schema.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stmle::simlab::{Assignment, ErrorRegime, EstimatorKind, MetricsRow};
use stmle::tmle::ScoreKind;

use crate::ingest::RowAccounting;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: String,
    pub version: String,
    pub truth: f64,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScenario {
    pub label: String,
    pub n: usize,
    pub error_regime: ErrorRegime,
    pub assignment: Assignment,
    pub reps: usize,
    pub folds: usize,
    pub splits: usize,
    pub master_seed: u64,
    pub score: ScoreKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCount {
    pub scenario: String,
    pub estimator: EstimatorKind,
    pub failures: usize,
    pub attempted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub version: String,
    pub command: String,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub estimators: Vec<EstimatorKind>,
    pub scenarios: Vec<ManifestScenario>,
    pub failures: Vec<FailureCount>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub width: f64,
    /// Standard deviation of the estimate across reruns with fresh
    /// partitions; empty for deterministic estimators or a single rerun.
    pub split_sd: Option<f64>,
    pub reruns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub kind: String,
    pub version: String,
    pub input: String,
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub terms: Vec<String>,
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub rows_used: usize,
    pub treated: usize,
    pub folds: usize,
    pub splits: usize,
    pub reruns: usize,
    pub seed: u64,
    pub wall_time_seconds: f64,
    pub rows: Vec<ComparisonRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<serde_json::Value>,
}

impl ComparisonReport {
    pub fn accounting(&self) -> RowAccounting {
        RowAccounting {
            rows_read: self.rows_read,
            rows_dropped: self.rows_dropped,
            rows_used: self.rows_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub kind: String,
    pub version: String,
    pub checks: Vec<CheckLine>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(CliError::from_csv)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}
