//! WebAssembly bindings for a static demo page. Each exported function takes
//! plain numbers and strings and returns a JSON document.

use serde::Serialize;
use stmle::benchmarks::{aipw_estimate, ols_ate, AipwConfig};
use stmle::design::MeanModelSpec;
use stmle::errordist::{fit_density, ErrorScore};
use stmle::seeds;
use stmle::simlab::oracles::bound_checks;
use stmle::simlab::{gen_error, simulate_dataset, Assignment, ErrorRegime, TRUE_ATE};
use stmle::tmle::{repeated_cross_fit, TmleConfig};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Serialize)]
pub struct ScoreCurve {
    pub regime: String,
    pub n: usize,
    pub bandwidth: f64,
    pub i1_hat: f64,
    pub i1_true: f64,
    pub v_hat: f64,
    pub grid: Vec<f64>,
    pub kernel_score: Vec<f64>,
    pub true_score: Vec<f64>,
    pub gaussian_score: Vec<f64>,
    pub kernel_density: Vec<f64>,
    pub true_density: Vec<f64>,
}

fn regime(name: &str) -> Result<ErrorRegime, String> {
    ErrorRegime::parse(name).ok_or_else(|| format!("unknown error regime `{name}`"))
}

fn assignment(name: &str) -> Result<Assignment, String> {
    Assignment::parse(name).ok_or_else(|| format!("unknown assignment `{name}`"))
}

/// Kernel score fitted to `n` simulated errors next to the true and
/// Gaussian scores, on a grid over [-4, 4].
pub fn score_curve(regime_name: &str, n: usize, seed: u64) -> Result<ScoreCurve, String> {
    let r = regime(regime_name)?;
    let eps = gen_error(r, n, &mut seeds::rng(seed));
    let model = fit_density(&eps).map_err(|e| e.to_string())?;
    let d = model.diagnostics();
    let grid: Vec<f64> = (0..=160).map(|i| -4.0 + 0.05 * i as f64).collect();
    let v = r.error_variance();
    Ok(ScoreCurve {
        regime: r.name().into(),
        n,
        bandwidth: d.h,
        i1_hat: d.i1_hat,
        i1_true: r.location_information(),
        v_hat: d.v_hat,
        kernel_score: grid.iter().map(|&u| model.score(u)).collect(),
        true_score: grid.iter().map(|&u| r.score(u)).collect(),
        gaussian_score: grid.iter().map(|&u| -u / v).collect(),
        kernel_density: grid.iter().map(|&u| model.density(u)).collect(),
        true_density: grid.iter().map(|&u| r.density(u)).collect(),
        grid,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Interval {
    pub estimator: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateSet {
    pub truth: f64,
    pub n: usize,
    pub treated: usize,
    pub intervals: Vec<Interval>,
}

/// One simulated dataset analysed by the three estimators.
pub fn estimate_once(
    regime_name: &str,
    assignment_name: &str,
    n: usize,
    splits: usize,
    seed: u64,
) -> Result<EstimateSet, String> {
    let data = simulate_dataset(n, regime(regime_name)?, assignment(assignment_name)?, seed, 0);
    let spec = MeanModelSpec::simulation();
    let err = |e: stmle::Error| e.to_string();
    let t = repeated_cross_fit(&data, &spec, &TmleConfig::default(), splits, seed).map_err(err)?;
    let o = ols_ate(&data, &spec).map_err(err)?;
    let a = aipw_estimate(&data, &AipwConfig::default(), splits, seed).map_err(err)?;
    let iv = |name: &str, est: f64, ci: (f64, f64)| Interval {
        estimator: name.into(),
        estimate: est,
        lo: ci.0,
        hi: ci.1,
    };
    Ok(EstimateSet {
        truth: TRUE_ATE,
        n,
        treated: data.treated_count(),
        intervals: vec![
            iv("proposed TMLE", t.psi_rcf, t.ci_rcf),
            iv("Gaussian OLS", o.psi, o.ci),
            iv("AIPW", a.psi_hat, a.ci),
        ],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub regime: String,
    pub structured_bound: f64,
    pub nonparametric_variance: f64,
    /// Asymptotic 95% interval widths at sample size 500.
    pub width_structured_n500: f64,
    pub width_nonparametric_n500: f64,
}

/// Structured efficiency bound against the nonparametric variance for every
/// regime, from `n` draws at the true parameters.
pub fn bound_table(n: usize, seed: u64) -> Result<Vec<BoundRow>, String> {
    ErrorRegime::ALL
        .iter()
        .map(|&r| {
            let b = bound_checks(r, n, seed).map_err(|e| e.to_string())?;
            let w = |v: f64| 2.0 * stmle::Z_95 * (v / 500.0).sqrt();
            Ok(BoundRow {
                regime: r.name().into(),
                structured_bound: b.bound,
                nonparametric_variance: b.np_variance,
                width_structured_n500: w(b.bound),
                width_nonparametric_n500: w(b.np_variance),
            })
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = scoreCurve)]
pub fn score_curve_js(regime: &str, n: u32, seed: u32) -> Result<String, JsError> {
    to_js(score_curve(regime, n as usize, seed as u64))
}

#[wasm_bindgen(js_name = estimateOnce)]
pub fn estimate_once_js(regime: &str, assignment: &str, n: u32, splits: u32, seed: u32) -> Result<String, JsError> {
    to_js(estimate_once(regime, assignment, n as usize, splits as usize, seed as u64))
}

#[wasm_bindgen(js_name = boundTable)]
pub fn bound_table_js(n: u32, seed: u32) -> Result<String, JsError> {
    to_js(bound_table(n as usize, seed as u64))
}
