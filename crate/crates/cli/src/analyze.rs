use std::time::Instant;

use serde_json::json;
use stmle::benchmarks::{aipw_estimate, ols_ate, AipwConfig};
use stmle::design::Dataset;
use stmle::seeds::{self, Purpose};
use stmle::simlab::EstimatorKind;
use stmle::tmle::{repeated_cross_fit, TmleConfig};

use crate::config::AnalysisConfig;
use crate::ingest::{load_csv, Roles};
use crate::report::{write_csv, write_json, ComparisonReport, ComparisonRow, IntervalRow};
use crate::{CliError, RunOptions, VERSION};

fn sample_sd(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    Some((x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt())
}

fn row(estimator: EstimatorKind, estimate: f64, se: f64, ci: (f64, f64), reruns: &[f64]) -> ComparisonRow {
    ComparisonRow {
        estimator,
        estimate,
        se,
        ci_lo: ci.0,
        ci_hi: ci.1,
        width: ci.1 - ci.0,
        split_sd: sample_sd(reruns),
        reruns: reruns.len(),
    }
}

fn runtime(kind: EstimatorKind) -> impl Fn(stmle::Error) -> CliError {
    move |e| CliError::Runtime(format!("{}: {e}", kind.name()))
}

/// Runs the configured estimators on an in-memory dataset.
///
/// Rerun `r` of a cross-fitted estimator uses master seed
/// `derive(seed, r, Rerun)`; rerun 0 is the reported estimate and the
/// spread over all reruns is the split standard deviation.
pub fn estimate(
    data: &Dataset,
    cfg: &AnalysisConfig,
    seed: u64,
    diagnostics: bool,
) -> Result<(Vec<ComparisonRow>, Option<serde_json::Value>), CliError> {
    let spec = cfg.mean_model()?;
    let rerun_seeds: Vec<u64> = (0..cfg.reruns as u64)
        .map(|r| seeds::derive(seed, r, Purpose::Rerun))
        .collect();
    let mut rows = Vec::new();
    let mut diag = serde_json::Map::new();
    for &kind in &cfg.estimators {
        match kind {
            EstimatorKind::Tmle => {
                let tcfg = TmleConfig {
                    folds: cfg.folds,
                    score: cfg.score,
                    ..TmleConfig::default()
                };
                let mut first = None;
                let mut psis = Vec::with_capacity(rerun_seeds.len());
                for &s in &rerun_seeds {
                    let r = repeated_cross_fit(data, &spec, &tcfg, cfg.splits, s).map_err(runtime(kind))?;
                    psis.push(r.psi_rcf);
                    first.get_or_insert(r);
                }
                let r = first.expect("at least one rerun");
                rows.push(row(kind, r.psi_rcf, r.se_rcf, r.ci_rcf, &psis));
                if diagnostics {
                    diag.insert(
                        "tmle".into(),
                        json!({
                            "within": r.within,
                            "between": r.between,
                            "max_relative_residual": r.max_relative_residual(),
                            "rerun_estimates": psis,
                            "splits": r.per_split,
                        }),
                    );
                }
            }
            EstimatorKind::Aipw => {
                let acfg = AipwConfig {
                    folds: cfg.folds,
                    lower: cfg.propensity_bounds.0,
                    upper: cfg.propensity_bounds.1,
                };
                let mut first = None;
                let mut psis = Vec::with_capacity(rerun_seeds.len());
                for &s in &rerun_seeds {
                    let r = aipw_estimate(data, &acfg, cfg.splits, s).map_err(runtime(kind))?;
                    psis.push(r.psi_hat);
                    first.get_or_insert(r);
                }
                let r = first.expect("at least one rerun");
                rows.push(row(kind, r.psi_hat, r.se, r.ci, &psis));
                if diagnostics {
                    diag.insert(
                        "aipw".into(),
                        json!({
                            "within": r.within,
                            "between": r.between,
                            "rerun_estimates": psis,
                            "splits": r.per_split,
                        }),
                    );
                }
            }
            EstimatorKind::Ols => {
                let r = ols_ate(data, &spec).map_err(runtime(kind))?;
                rows.push(row(kind, r.psi, r.se, r.ci, &[]));
                if diagnostics {
                    let coef: serde_json::Map<String, serde_json::Value> = spec
                        .labels()
                        .iter()
                        .cloned()
                        .zip(r.beta.iter().map(|b| json!(b)))
                        .collect();
                    diag.insert(
                        "ols".into(),
                        json!({
                            "coefficients": coef,
                            "sigma2": r.sigma2,
                            "coef_variance": r.coef_variance,
                            "marginal_variance": r.marginal_variance,
                        }),
                    );
                }
            }
        }
    }
    Ok((rows, diagnostics.then_some(serde_json::Value::Object(diag))))
}

/// Ingests the configured CSV, runs the estimators and writes
/// `comparison.csv`, `comparison.json` and `intervals.csv`.
pub fn run(cfg: &AnalysisConfig, opts: &RunOptions) -> Result<ComparisonReport, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let seed = opts.seed.unwrap_or(cfg.seed);
    let ing = load_csv(&cfg.input, &Roles::from_config(cfg), |c| cfg.transform_of(c))?;
    let out = opts.prepare()?;
    let (rows, diagnostics) = estimate(&ing.data, cfg, seed, opts.diagnostics)?;

    let intervals: Vec<IntervalRow> = rows
        .iter()
        .map(|r| IntervalRow {
            estimator: r.estimator,
            estimate: r.estimate,
            lo: r.ci_lo,
            hi: r.ci_hi,
        })
        .collect();
    write_csv(&out.join("comparison.csv"), &rows)?;
    write_csv(&out.join("intervals.csv"), &intervals)?;
    let report = ComparisonReport {
        kind: "comparison".into(),
        version: VERSION.into(),
        input: cfg.input.display().to_string(),
        outcome: cfg.outcome.clone(),
        treatment: cfg.treatment.clone(),
        covariates: cfg.covariates.clone(),
        terms: cfg.mean_model()?.labels().to_vec(),
        rows_read: ing.accounting.rows_read,
        rows_dropped: ing.accounting.rows_dropped,
        rows_used: ing.accounting.rows_used,
        treated: ing.data.treated_count(),
        folds: cfg.folds,
        splits: cfg.splits,
        reruns: cfg.reruns,
        seed,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        rows,
        diagnostics,
    };
    write_json(&out.join("comparison.json"), &report)?;
    Ok(report)
}
