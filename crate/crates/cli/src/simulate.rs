use std::time::Instant;

use serde::Serialize;
use stmle::simlab::{run_replications, simulate_dataset, tabulate, MetricsTable, ReplicationRecord, TRUE_ATE};

use crate::config::SimulateConfig;
use crate::ingest::write_dataset;
use crate::report::{write_csv, write_json, FailureCount, Manifest, ManifestScenario, MetricsReport};
use crate::{CliError, RunOptions, VERSION};

/// What `simulate` produced.
#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub table: MetricsTable,
    pub manifest: Manifest,
}

impl SimulateOutcome {
    pub fn budget_exceeded(&self) -> Vec<&FailureCount> {
        self.manifest
            .failures
            .iter()
            .filter(|f| f.failures * 100 > f.attempted)
            .collect()
    }
}

#[derive(Serialize)]
struct ScenarioRecords<'a> {
    scenario: String,
    records: &'a [ReplicationRecord],
}

/// Runs every configured scenario and writes `metrics.csv`, `metrics.json`
/// and `manifest.json`. With `dump_data`, replication 0 of each scenario is
/// also written as `data-<scenario>.csv`.
pub fn run(cfg: &SimulateConfig, opts: &RunOptions, dump_data: bool) -> Result<SimulateOutcome, CliError> {
    let out = opts.prepare()?;
    let start = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        for s in &mut cfg.scenarios {
            s.master_seed = seed;
        }
    }
    cfg.validate()?;

    let mut table = MetricsTable::default();
    let mut failures = Vec::new();
    let mut all_records = Vec::new();
    let mut files = vec!["metrics.csv".to_string(), "metrics.json".to_string()];
    for scenario in &cfg.scenarios {
        let records = run_replications(scenario, &cfg.estimators).map_err(|e| CliError::Runtime(e.to_string()))?;
        for &kind in &cfg.estimators {
            let failed = records
                .iter()
                .flat_map(|r| &r.outcomes)
                .filter(|o| o.estimator == kind && o.draw.is_none())
                .count();
            failures.push(FailureCount {
                scenario: scenario.label(),
                estimator: kind,
                failures: failed,
                attempted: scenario.reps,
            });
        }
        table.extend(tabulate(scenario, &cfg.estimators, &records));
        if dump_data {
            let name = format!("data-{}.csv", scenario.label());
            let data = simulate_dataset(scenario.n, scenario.error_regime, scenario.assignment, scenario.master_seed, 0);
            write_dataset(&out.join(&name), &data)?;
            files.push(name);
        }
        if opts.diagnostics {
            all_records.push((scenario.label(), records));
        }
    }

    write_csv(&out.join("metrics.csv"), &table.rows)?;
    write_json(
        &out.join("metrics.json"),
        &MetricsReport {
            kind: "metrics".into(),
            version: VERSION.into(),
            truth: TRUE_ATE,
            rows: table.rows.clone(),
        },
    )?;
    if opts.diagnostics {
        let docs: Vec<ScenarioRecords> = all_records
            .iter()
            .map(|(s, r)| ScenarioRecords {
                scenario: s.clone(),
                records: r,
            })
            .collect();
        write_json(&out.join("replications.json"), &docs)?;
        files.push("replications.json".into());
    }
    files.push("manifest.json".into());
    let manifest = Manifest {
        kind: "manifest".into(),
        version: VERSION.into(),
        command: "simulate".into(),
        threads: rayon::current_num_threads(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        estimators: cfg.estimators.clone(),
        scenarios: cfg
            .scenarios
            .iter()
            .map(|s| ManifestScenario {
                label: s.label(),
                n: s.n,
                error_regime: s.error_regime,
                assignment: s.assignment,
                reps: s.reps,
                folds: s.folds,
                splits: s.splits,
                master_seed: s.master_seed,
                score: s.score,
            })
            .collect(),
        failures,
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(SimulateOutcome { table, manifest })
}
