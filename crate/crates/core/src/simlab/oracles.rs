//! Large-sample Monte Carlo checks of population identities, shared by the
//! test suites and the `selftest` command.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dgp::{simulate_dataset, Assignment, ErrorRegime, BETA0, TRUE_ATE};
use crate::benchmarks::np_eif;
use crate::design::{Dataset, MeanModelSpec};
use crate::effscore::EffScoreContext;
use crate::errordist::{ErrorScore, GaussianScore};
use crate::error::Result;

/// Exact score of a simulation error law.
#[derive(Debug, Clone, Copy)]
pub struct TrueScore(pub ErrorRegime);

impl ErrorScore for TrueScore {
    fn score(&self, u: f64) -> f64 {
        self.0.score(u)
    }

    fn variance(&self) -> f64 {
        self.0.error_variance()
    }
}

/// A Monte Carlo mean compared with its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub target: f64,
}

impl MomentCheck {
    fn from_values(label: impl Into<String>, values: &[f64], target: f64) -> Self {
        let (m, se) = mean_se(values);
        MomentCheck {
            label: label.into(),
            estimate: m,
            se,
            target,
        }
    }

    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            (self.estimate - self.target) / self.se
        } else if self.estimate == self.target {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, k: f64) -> bool {
        self.z().abs() <= k
    }
}

/// Sample mean and its standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn true_context(data: &Dataset, regime: ErrorRegime) -> Result<EffScoreContext> {
    EffScoreContext::fit(&MeanModelSpec::simulation(), &BETA0, Arc::new(TrueScore(regime)), data)
}

fn true_errors(data: &Dataset, regime: ErrorRegime) -> Vec<f64> {
    let spec = MeanModelSpec::simulation();
    (0..data.n())
        .map(|i| {
            let w = data.w(i);
            data.y(i) - spec.eval_mean(&BETA0, data.a(i), w).expect("simulation basis") - regime.perturbation(w)
        })
        .collect()
}

/// Residualises `a` on `{1, e}` in-sample.
fn residualize(a: &[f64], e: &[f64]) -> Vec<f64> {
    let n = a.len() as f64;
    let (ma, me) = (a.iter().sum::<f64>() / n, e.iter().sum::<f64>() / n);
    let sxy: f64 = a.iter().zip(e).map(|(x, y)| (x - ma) * (y - me)).sum();
    let sxx: f64 = e.iter().map(|y| (y - me).powi(2)).sum();
    let b = sxy / sxx;
    a.iter().zip(e).map(|(x, y)| x - ma - b * (y - me)).collect()
}

/// `E[S b(X)] = 0` for mean-zero covariate functions and `E[S a(eps)] = 0`
/// for error perturbations with `E a = E[eps a] = 0`, component by component,
/// with the true error score at the true coefficients.
pub fn orthogonality_checks(regime: ErrorRegime, n: usize, seed: u64) -> Result<Vec<MomentCheck>> {
    let data = simulate_dataset(n, regime, Assignment::Balanced, seed, 0);
    let ctx = true_context(&data, regime)?;
    let e = true_errors(&data, regime);
    let center = |x: Vec<f64>| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.into_iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let b_funcs: Vec<(&str, Vec<f64>)> = vec![
        ("W1", center((0..n).map(|i| data.w(i)[0]).collect())),
        ("A*W2", center((0..n).map(|i| data.a(i) as f64 * data.w(i)[1]).collect())),
        ("W3*W4^2", center((0..n).map(|i| data.w(i)[2] * data.w(i)[3].powi(2)).collect())),
    ];
    let a_funcs: Vec<(&str, Vec<f64>)> = vec![
        ("eps^3", residualize(&e.iter().map(|x| x.powi(3)).collect::<Vec<_>>(), &e)),
        ("|eps|", residualize(&e.iter().map(|x| x.abs()).collect::<Vec<_>>(), &e)),
        ("eps^2", residualize(&e.iter().map(|x| x * x).collect::<Vec<_>>(), &e)),
    ];
    let scores: Vec<Vec<f64>> = (0..n)
        .map(|i| ctx.efficient_score(data.w(i), data.a(i), data.y(i) - regime.perturbation(data.w(i))))
        .collect();
    let labels = MeanModelSpec::simulation().labels().to_vec();
    let mut out = Vec::new();
    for (name, f) in b_funcs.iter().chain(a_funcs.iter()) {
        for (j, label) in labels.iter().enumerate() {
            let prod: Vec<f64> = (0..n).map(|i| scores[i][j] * f[i]).collect();
            out.push(MomentCheck::from_values(format!("E[S_{label} * {name}]"), &prod, 0.0));
        }
    }
    Ok(out)
}

/// Largest `|S(O) - phi e / v|` when the Gaussian score is plugged in.
pub fn gaussian_reduction_error(n: usize, seed: u64) -> Result<f64> {
    let spec = MeanModelSpec::simulation();
    let data = simulate_dataset(n, ErrorRegime::Gaussian, Assignment::Balanced, seed, 0);
    let v = 1.3;
    let ctx = EffScoreContext::fit(&spec, &BETA0, Arc::new(GaussianScore { variance: v }), &data)?;
    let mut worst = 0.0f64;
    let mut phi = vec![0.0; spec.k()];
    for i in 0..data.n() {
        let (w, a, y) = (data.w(i), data.a(i), data.y(i));
        spec.features_into(a, w, &mut phi);
        let e = y - spec.eval_mean(&BETA0, a, w)?;
        for (s, p) in ctx.efficient_score(w, a, y).iter().zip(&phi) {
            worst = worst.max((s - p * e / v).abs() / (1.0 + (p * e / v).abs()));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundChecks {
    /// Sample variance of the ATE influence function at the truth.
    pub eif_variance: MomentCheck,
    /// Covariance between the marginal and regression components.
    pub cross_term: MomentCheck,
    pub bound: f64,
    /// Sample variance of the nonparametric influence function with the
    /// true propensity and outcome regressions.
    pub np_variance: f64,
    pub np_variance_se: f64,
    pub eif_mean: MomentCheck,
    pub np_eif_mean: MomentCheck,
}

impl BoundChecks {
    /// `bound <= np_variance` up to `k` Monte Carlo standard errors.
    pub fn bound_below_np(&self, k: f64) -> bool {
        self.bound <= self.np_variance + k * self.np_variance_se
    }
}

pub fn bound_checks(regime: ErrorRegime, n: usize, seed: u64) -> Result<BoundChecks> {
    let spec = MeanModelSpec::simulation();
    let data = simulate_dataset(n, regime, Assignment::Balanced, seed, 0);
    let ctx = true_context(&data, regime)?;
    let bound = ctx.efficiency_bound(&data);
    let mut eif = Vec::with_capacity(n);
    let mut marg = Vec::with_capacity(n);
    let mut reg = Vec::with_capacity(n);
    let mut np = Vec::with_capacity(n);
    for i in 0..n {
        let (w, a) = (data.w(i), data.a(i));
        let y = data.y(i) - regime.perturbation(w);
        let d = spec.eval_contrast(&BETA0, w)? - TRUE_ATE;
        let r = ctx.eif_regression_part(w, a, y);
        marg.push(d);
        reg.push(r);
        eif.push(d + r);
        let g = Assignment::Balanced.propensity(w);
        let mu1 = spec.eval_mean(&BETA0, 1, w)?;
        let mu0 = spec.eval_mean(&BETA0, 0, w)?;
        np.push(np_eif(a, y, g, mu1, mu0, TRUE_ATE)?);
    }
    let sq = |x: &[f64]| {
        let (m, _) = mean_se(x);
        x.iter().map(|v| (v - m).powi(2)).collect::<Vec<_>>()
    };
    let (mm, _) = mean_se(&marg);
    let (mr, _) = mean_se(&reg);
    let cross: Vec<f64> = marg.iter().zip(&reg).map(|(a, b)| (a - mm) * (b - mr)).collect();
    let np_sq = sq(&np);
    let (np_variance, np_variance_se) = mean_se(&np_sq);
    Ok(BoundChecks {
        eif_variance: MomentCheck::from_values("Var(eif_psi)", &sq(&eif), bound),
        cross_term: MomentCheck::from_values("Cov(marginal, regression)", &cross, 0.0),
        bound,
        np_variance,
        np_variance_se,
        eif_mean: MomentCheck::from_values("E[eif_psi]", &eif, 0.0),
        np_eif_mean: MomentCheck::from_values("E[np_eif]", &np, 0.0),
    })
}

/// Average treated fraction of the assignment mechanism.
pub fn treated_fraction(assignment: Assignment, n: usize, seed: u64) -> f64 {
    let data = simulate_dataset(n, ErrorRegime::Gaussian, assignment, seed, 0);
    data.treated_count() as f64 / n as f64
}

/// Plug-in ATE of the generating coefficients over a large covariate sample.
pub fn truth_check(regime: ErrorRegime, n: usize, seed: u64) -> Result<MomentCheck> {
    let spec = MeanModelSpec::simulation();
    let data = simulate_dataset(n, regime, Assignment::Balanced, seed, 0);
    let deltas = (0..n)
        .map(|i| {
            // the sine perturbation is treatment-free and cancels in the contrast
            let w = data.w(i);
            Ok(spec.eval_mean(&BETA0, 1, w)? + regime.perturbation(w) - spec.eval_mean(&BETA0, 0, w)? - regime.perturbation(w))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MomentCheck::from_values(format!("ATE ({})", regime.name()), &deltas, TRUE_ATE))
}
