use serde::{Deserialize, Serialize};

use super::dgp::{simulate_dataset, Assignment, ErrorRegime, TRUE_ATE};
use super::metrics::{summarize, Draw};
use crate::benchmarks::{aipw_estimate, ols_ate, AipwConfig};
use crate::design::MeanModelSpec;
use crate::error::{Error, Result};
use crate::par;
use crate::seeds::{self, Purpose};
use crate::tmle::{repeated_cross_fit, ScoreKind, TmleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Tmle,
    Ols,
    Aipw,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Tmle => "tmle",
            EstimatorKind::Ols => "ols",
            EstimatorKind::Aipw => "aipw",
        }
    }
}

fn default_folds() -> usize {
    5
}

fn default_splits() -> usize {
    20
}

fn default_score() -> ScoreKind {
    ScoreKind::Kernel
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub n: usize,
    pub error_regime: ErrorRegime,
    pub assignment: Assignment,
    pub reps: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_splits")]
    pub splits: usize,
    pub master_seed: u64,
    #[serde(default = "default_score")]
    pub score: ScoreKind,
}

impl ScenarioSpec {
    pub fn new(n: usize, error_regime: ErrorRegime, assignment: Assignment, reps: usize, master_seed: u64) -> Self {
        ScenarioSpec {
            name: None,
            n,
            error_regime,
            assignment,
            reps,
            folds: default_folds(),
            splits: default_splits(),
            master_seed,
            score: default_score(),
        }
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}-{}-n{}", self.assignment.name(), self.error_regime.name(), self.n))
    }

    pub fn truth(&self) -> f64 {
        TRUE_ATE
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if self.folds < 2 || self.folds > self.n {
            return Err(Error::InvalidArgument(format!("folds must lie in [2, n], got {}", self.folds)));
        }
        if self.splits < 2 {
            return Err(Error::InvalidArgument("splits must be at least 2".into()));
        }
        Ok(())
    }
}

/// Outcome of one estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: EstimatorKind,
    pub draw: Option<Draw>,
    pub error: Option<String>,
    /// Largest `|G(eps_hat)| / (1 + |G(0)|)` over all folds and splits.
    pub max_targeting_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub outcomes: Vec<EstimatorOutcome>,
}

fn run_one(scenario: &ScenarioSpec, kind: EstimatorKind, rep: usize) -> EstimatorOutcome {
    let data = simulate_dataset(
        scenario.n,
        scenario.error_regime,
        scenario.assignment,
        scenario.master_seed,
        rep as u64,
    );
    let seed = seeds::derive(scenario.master_seed, rep as u64, Purpose::Replication);
    let spec = MeanModelSpec::simulation();
    let res: Result<(Draw, Option<f64>)> = match kind {
        EstimatorKind::Tmle => {
            let cfg = TmleConfig {
                folds: scenario.folds,
                score: scenario.score,
                ..TmleConfig::default()
            };
            repeated_cross_fit(&data, &spec, &cfg, scenario.splits, seed).map(|r| {
                let draw = Draw {
                    estimate: r.psi_rcf,
                    lo: r.ci_rcf.0,
                    hi: r.ci_rcf.1,
                };
                (draw, Some(r.max_relative_residual()))
            })
        }
        EstimatorKind::Ols => ols_ate(&data, &spec).map(|r| {
            let draw = Draw {
                estimate: r.psi,
                lo: r.ci.0,
                hi: r.ci.1,
            };
            (draw, None)
        }),
        EstimatorKind::Aipw => {
            let cfg = AipwConfig {
                folds: scenario.folds,
                ..AipwConfig::default()
            };
            aipw_estimate(&data, &cfg, scenario.splits, seed).map(|r| {
                let draw = Draw {
                    estimate: r.psi_hat,
                    lo: r.ci.0,
                    hi: r.ci.1,
                };
                (draw, None)
            })
        }
    };
    match res {
        Ok((draw, resid)) => EstimatorOutcome {
            estimator: kind,
            draw: Some(draw),
            error: None,
            max_targeting_residual: resid,
        },
        Err(e) => EstimatorOutcome {
            estimator: kind,
            draw: None,
            error: Some(e.to_string()),
            max_targeting_residual: None,
        },
    }
}

/// Runs every replication and estimator; results are ordered by replication
/// index regardless of scheduling.
pub fn run_replications(scenario: &ScenarioSpec, estimators: &[EstimatorKind]) -> Result<Vec<ReplicationRecord>> {
    scenario.validate()?;
    if estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators requested".into()));
    }
    Ok(par::map_indexed(scenario.reps, |rep| ReplicationRecord {
        rep,
        outcomes: estimators.iter().map(|&k| run_one(scenario, k, rep)).collect(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub error_regime: ErrorRegime,
    pub assignment: Assignment,
    pub n: usize,
    pub estimator: EstimatorKind,
    pub reps: usize,
    pub failures: usize,
    pub bias: f64,
    pub esd: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub width: f64,
    pub bias_se: f64,
    pub esd_se: f64,
    pub rmse_se: f64,
    pub coverage_se: f64,
    pub width_se: f64,
    pub max_targeting_residual: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn find(&self, scenario: &str, estimator: EstimatorKind) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.estimator == estimator)
    }

    pub fn extend(&mut self, other: MetricsTable) {
        self.rows.extend(other.rows);
    }

    /// Rows whose failure count exceeds 1% of the attempted replications.
    pub fn budget_violations(&self) -> Vec<&MetricsRow> {
        self.rows
            .iter()
            .filter(|r| r.failures * 100 > r.reps + r.failures)
            .collect()
    }
}

/// Aggregates replication records into one row per estimator.
pub fn tabulate(scenario: &ScenarioSpec, estimators: &[EstimatorKind], records: &[ReplicationRecord]) -> MetricsTable {
    let truth = scenario.truth();
    let rows = estimators
        .iter()
        .filter_map(|&kind| {
            let outcomes: Vec<&EstimatorOutcome> = records
                .iter()
                .flat_map(|r| r.outcomes.iter().filter(move |o| o.estimator == kind))
                .collect();
            let draws: Vec<Draw> = outcomes.iter().filter_map(|o| o.draw).collect();
            let failures = outcomes.len() - draws.len();
            let resid = outcomes
                .iter()
                .filter_map(|o| o.max_targeting_residual)
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
            let s = summarize(&draws, truth)?;
            Some(MetricsRow {
                scenario: scenario.label(),
                error_regime: scenario.error_regime,
                assignment: scenario.assignment,
                n: scenario.n,
                estimator: kind,
                reps: s.reps,
                failures,
                bias: s.bias,
                esd: s.esd,
                rmse: s.rmse,
                coverage: s.coverage,
                width: s.width,
                bias_se: s.bias_se,
                esd_se: s.esd_se,
                rmse_se: s.rmse_se,
                coverage_se: s.coverage_se,
                width_se: s.width_se,
                max_targeting_residual: resid,
            })
        })
        .collect();
    MetricsTable { rows }
}

/// Runs the scenario and aggregates; fails when any estimator loses more
/// than 1% of its replications.
pub fn monte_carlo(scenario: &ScenarioSpec, estimators: &[EstimatorKind]) -> Result<MetricsTable> {
    let records = run_replications(scenario, estimators)?;
    let table = tabulate(scenario, estimators, &records);
    for &kind in estimators {
        let failures = records
            .iter()
            .flat_map(|r| &r.outcomes)
            .filter(|o| o.estimator == kind && o.draw.is_none())
            .count();
        if failures * 100 > scenario.reps {
            return Err(Error::FailureBudget {
                estimator: kind.name().to_string(),
                failures,
                reps: scenario.reps,
            });
        }
    }
    Ok(table)
}
