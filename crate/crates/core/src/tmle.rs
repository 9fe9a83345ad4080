//! Cross-fitted targeting along the least favourable fluctuation
//! `beta(eps) = beta_init + eps * I^{-1} psi_grad`.
//!
//! On each training split the initial least-squares fit and the kernel error
//! density are computed once. The density stays fixed while the scalar
//! equation
//!
//! ```text
//! G(eps) = psi_grad' I(beta(eps))^{-1} mean_j S(O_j; beta(eps)) = 0
//! ```
//!
//! is solved, with residuals, scores and the information matrix re-evaluated
//! at `beta(eps)`. Held-out contrasts at the targeted `beta` are averaged into
//! the substitution estimator.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::design::{fit_ols_full, BetaEstimate, BetaSource, Dataset, MeanModelSpec};
use crate::effscore::{EffScoreContext, TrainingDesign};
use crate::error::{Error, Result};
use crate::errordist::{fit_density, DensityDiagnostics, ErrorScore, GaussianScore};
use crate::rootfind::{self, RootOptions};
use crate::seeds::{self, Purpose};
use crate::{linalg, par, Z_95};

/// Error score plugged into the efficient score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Gaussian-kernel estimate of the residual density.
    Kernel,
    /// `-u / v_hat`: reduces the estimator to a Gaussian working model.
    GaussianAnalytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmleConfig {
    pub folds: usize,
    pub score: ScoreKind,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TmleConfig {
    fn default() -> Self {
        TmleConfig {
            folds: 5,
            score: ScoreKind::Kernel,
            tol: 1e-8,
            max_iter: 25,
        }
    }
}

/// Balanced random partition of `0..n` into `k` folds. Fold ids are
/// zero-based here and reported one-based in diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignment: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    /// Plan from an explicit assignment; every fold must be nonempty.
    pub fn from_assignment(k: usize, assignment: Vec<usize>, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument("need at least two folds".into()));
        }
        let mut sizes = vec![0usize; k];
        for &f in &assignment {
            if f >= k {
                return Err(Error::InvalidArgument(format!("fold id {f} out of range for {k} folds")));
            }
            sizes[f] += 1;
        }
        if let Some(f) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("fold {} is empty", f + 1)));
        }
        Ok(FoldPlan { k, assignment, seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        self.assignment.iter().for_each(|&f| s[f] += 1);
        s
    }

    /// `(training, held-out)` indices for fold `f`, both ascending.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut held) = (Vec::new(), Vec::new());
        for (i, &g) in self.assignment.iter().enumerate() {
            if g == f {
                held.push(i);
            } else {
                train.push(i);
            }
        }
        (train, held)
    }
}

pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count must satisfy 2 <= K <= n (K = {k}, n = {n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    FoldPlan::from_assignment(k, assignment, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingResult {
    pub epsilon_hat: f64,
    /// `I(beta_init)^{-1} psi_grad`.
    pub direction: Vec<f64>,
    pub iterations: usize,
    /// `G(epsilon_hat)`.
    pub residual_score: f64,
    /// `G(0)`.
    pub initial_score: f64,
}

impl TargetingResult {
    /// `|G(eps_hat)| / (1 + |G(0)|)`.
    pub fn relative_residual(&self) -> f64 {
        self.residual_score.abs() / (1.0 + self.initial_score.abs())
    }
}

/// Output of targeting on one training split.
#[derive(Debug, Clone)]
pub struct FoldFit {
    pub beta_init: BetaEstimate,
    pub beta_targeted: BetaEstimate,
    pub targeting: TargetingResult,
    pub context: EffScoreContext,
    pub density: Option<DensityDiagnostics>,
}

/// Minimum training-split size for a model with `k` coefficients.
pub fn min_training_size(k: usize) -> usize {
    (k + 5).max(20)
}

/// Initial fit, density estimate and scalar targeting on one training split.
pub fn target_fold(train: &Dataset, spec: &MeanModelSpec, cfg: &TmleConfig) -> Result<FoldFit> {
    let need = min_training_size(spec.k());
    if train.n() < need {
        return Err(Error::InsufficientData {
            needed: need,
            got: train.n(),
        });
    }
    let ols = fit_ols_full(spec, train)?;
    let beta0 = ols.estimate.beta.clone();
    let (score, density): (Arc<dyn ErrorScore>, _) = match cfg.score {
        ScoreKind::Kernel => {
            let model = fit_density(&ols.residuals)?;
            let diag = model.diagnostics();
            (Arc::new(model), Some(diag))
        }
        ScoreKind::GaussianAnalytic => {
            let n = ols.residuals.len() as f64;
            let mean = ols.residuals.iter().sum::<f64>() / n;
            let v = ols.residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            if !(v > 0.0) {
                return Err(Error::DegenerateResiduals);
            }
            (Arc::new(GaussianScore { variance: v }), None)
        }
    };

    let design = TrainingDesign::new(spec, train);
    let (_, info0) = design.score_moments(&beta0, score.as_ref());
    let direction = linalg::mat_vec(&linalg::spd_inverse(&info0)?, &design.psi_grad);

    let k = spec.k();
    let moved = |eps: f64| -> Vec<f64> { (0..k).map(|j| beta0[j] + eps * direction[j]).collect() };
    let g = |eps: f64| -> Result<f64> {
        let beta = moved(eps);
        let (sbar, info) = design.score_moments(&beta, score.as_ref());
        let inv = linalg::spd_inverse(&info)?;
        Ok(linalg::dot(&design.psi_grad, &linalg::mat_vec(&inv, &sbar)))
    };
    let root = rootfind::solve(
        g,
        RootOptions {
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            ..RootOptions::default()
        },
    )?;

    let beta_hat = moved(root.x);
    let (_, info_hat) = design.score_moments(&beta_hat, score.as_ref());
    let context = EffScoreContext::assemble(
        spec,
        &beta_hat,
        score,
        design.gbar.clone(),
        design.psi_grad.clone(),
        info_hat,
    )?;
    Ok(FoldFit {
        beta_init: ols.estimate,
        beta_targeted: BetaEstimate {
            beta: beta_hat,
            source: BetaSource::Targeted,
            fold_id: None,
        },
        targeting: TargetingResult {
            epsilon_hat: root.x,
            direction,
            iterations: root.iterations,
            residual_score: root.value,
            initial_score: root.initial,
        },
        context,
        density,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    /// One-based fold id.
    pub fold: usize,
    pub train_size: usize,
    pub beta_init: Vec<f64>,
    pub beta_targeted: Vec<f64>,
    pub targeting: TargetingResult,
    pub density: Option<DensityDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleResult {
    pub psi_hat: f64,
    pub se: f64,
    pub ci: (f64, f64),
    /// Achieved mean of the cross-fitted influence values.
    pub eif_mean: f64,
    pub eif_values: Vec<f64>,
    pub per_fold: Vec<FoldDiagnostics>,
}

impl TmleResult {
    pub fn variance(&self) -> f64 {
        self.se * self.se
    }

    pub fn max_relative_residual(&self) -> f64 {
        self.per_fold
            .iter()
            .map(|f| f.targeting.relative_residual())
            .fold(0.0, f64::max)
    }
}

pub fn cross_fit_estimate(data: &Dataset, spec: &MeanModelSpec, cfg: &TmleConfig, seed: u64) -> Result<TmleResult> {
    let plan = make_folds(data.n(), cfg.folds, seed)?;
    cross_fit_with_plan(data, spec, cfg, &plan)
}

/// Cross-fitted substitution estimator under a given partition.
pub fn cross_fit_with_plan(data: &Dataset, spec: &MeanModelSpec, cfg: &TmleConfig, plan: &FoldPlan) -> Result<TmleResult> {
    spec.check_dataset(data)?;
    let n = data.n();
    if plan.assignment().len() != n {
        return Err(Error::Dimension {
            what: "fold assignment",
            expected: n,
            got: plan.assignment().len(),
        });
    }
    let folds = par::map_indexed(plan.k(), |f| -> Result<_> {
        let (train_idx, held_idx) = plan.split(f);
        let train = data.subset(&train_idx);
        let mut fit = target_fold(&train, spec, cfg).map_err(|e| e.in_fold(f + 1))?;
        fit.beta_init.fold_id = Some(f + 1);
        fit.beta_targeted.fold_id = Some(f + 1);
        let values: Vec<(usize, f64, f64)> = held_idx
            .iter()
            .map(|&i| {
                let (w, a, y) = (data.w(i), data.a(i), data.y(i));
                let delta = spec.contrast_unchecked(fit.context.beta(), w);
                (i, delta, fit.context.eif_regression_part(w, a, y))
            })
            .collect();
        Ok((fit, train_idx.len(), values))
    });

    let mut delta = vec![0.0; n];
    let mut reg = vec![0.0; n];
    let mut per_fold = Vec::with_capacity(plan.k());
    for (f, res) in folds.into_iter().enumerate() {
        let (fit, train_size, values) = res?;
        for (i, d, r) in values {
            delta[i] = d;
            reg[i] = r;
        }
        per_fold.push(FoldDiagnostics {
            fold: f + 1,
            train_size,
            beta_init: fit.beta_init.beta,
            beta_targeted: fit.beta_targeted.beta,
            targeting: fit.targeting,
            density: fit.density,
        });
    }
    let nf = n as f64;
    let psi_hat = delta.iter().sum::<f64>() / nf;
    let eif_values: Vec<f64> = (0..n).map(|i| delta[i] - psi_hat + reg[i]).collect();
    let se = eif_values.iter().map(|d| d * d).sum::<f64>().sqrt() / nf;
    let eif_mean = eif_values.iter().sum::<f64>() / nf;
    Ok(TmleResult {
        psi_hat,
        se,
        ci: (psi_hat - Z_95 * se, psi_hat + Z_95 * se),
        eif_mean,
        eif_values,
        per_fold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub seed: u64,
    pub psi: f64,
    pub variance: f64,
    pub eif_mean: f64,
    pub folds: Vec<FoldDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedResult {
    pub b: usize,
    pub per_split: Vec<SplitSummary>,
    pub psi_rcf: f64,
    pub v_rcf: f64,
    pub se_rcf: f64,
    pub ci_rcf: (f64, f64),
    /// Mean within-split variance.
    pub within: f64,
    /// Between-split sample variance of the split estimates.
    pub between: f64,
}

impl RepeatedResult {
    pub fn max_relative_residual(&self) -> f64 {
        self.per_split
            .iter()
            .flat_map(|s| s.folds.iter())
            .map(|f| f.targeting.relative_residual())
            .fold(0.0, f64::max)
    }

    /// Sample standard deviation of the split estimates.
    pub fn split_sd(&self) -> f64 {
        self.between.sqrt()
    }
}

/// Combines split estimates and variances: mean estimate, and mean variance
/// plus between-split sample variance. Returns `(psi, v, within, between)`.
pub fn combine_splits(psis: &[f64], variances: &[f64]) -> (f64, f64, f64, f64) {
    let b = psis.len() as f64;
    let psi = psis.iter().sum::<f64>() / b;
    let within = variances.iter().sum::<f64>() / b;
    let between = if psis.len() > 1 {
        psis.iter().map(|p| (p - psi).powi(2)).sum::<f64>() / (b - 1.0)
    } else {
        0.0
    };
    (psi, within + between, within, between)
}

pub fn repeated_cross_fit(
    data: &Dataset,
    spec: &MeanModelSpec,
    cfg: &TmleConfig,
    b: usize,
    master_seed: u64,
) -> Result<RepeatedResult> {
    if b < 2 {
        return Err(Error::InvalidArgument(
            "repeated cross-fitting needs B >= 2; use cross_fit_estimate for a single split".into(),
        ));
    }
    let seeds: Vec<u64> = (0..b as u64)
        .map(|i| seeds::derive(master_seed, i, Purpose::Partition))
        .collect();
    repeated_cross_fit_with_seeds(data, spec, cfg, &seeds)
}

/// Repeated cross-fitting with explicit partition seeds (one per split).
pub fn repeated_cross_fit_with_seeds(
    data: &Dataset,
    spec: &MeanModelSpec,
    cfg: &TmleConfig,
    seeds: &[u64],
) -> Result<RepeatedResult> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument(
            "repeated cross-fitting needs B >= 2; use cross_fit_estimate for a single split".into(),
        ));
    }
    let runs = par::map_indexed(seeds.len(), |i| cross_fit_estimate(data, spec, cfg, seeds[i]));
    let mut per_split = Vec::with_capacity(seeds.len());
    for (seed, run) in seeds.iter().zip(runs) {
        let r = run?;
        per_split.push(SplitSummary {
            seed: *seed,
            psi: r.psi_hat,
            variance: r.variance(),
            eif_mean: r.eif_mean,
            folds: r.per_fold,
        });
    }
    let psis: Vec<f64> = per_split.iter().map(|s| s.psi).collect();
    let vars: Vec<f64> = per_split.iter().map(|s| s.variance).collect();
    let (psi_rcf, v_rcf, within, between) = combine_splits(&psis, &vars);
    let se_rcf = v_rcf.sqrt();
    Ok(RepeatedResult {
        b: seeds.len(),
        per_split,
        psi_rcf,
        v_rcf,
        se_rcf,
        ci_rcf: (psi_rcf - Z_95 * se_rcf, psi_rcf + Z_95 * se_rcf),
        within,
        between,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Term;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const SIM_BETA: [f64; 8] = [0.0, 1.0, 0.8, -0.6, 0.5, 0.4, 0.7, -0.5];

    fn sim(n: usize, seed: u64, noise: f64, skew: bool) -> Dataset {
        let spec = MeanModelSpec::simulation();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<_> = (0..n)
            .map(|_| {
                let w1: f64 = StandardNormal.sample(&mut rng);
                let w2: f64 = StandardNormal.sample(&mut rng);
                let w3 = (rng.random::<f64>() < 0.5) as u8 as f64;
                let w4 = rng.random_range(-1.0..1.0);
                let w = vec![w1, w2, w3, w4];
                let a = (rng.random::<f64>() < 0.5) as u8;
                let z: f64 = StandardNormal.sample(&mut rng);
                let e = if skew {
                    if rng.random::<f64>() < 0.2 { 2.0 + z } else { -0.5 + 0.5 * z }
                } else {
                    z
                };
                let y = spec.eval_mean(&SIM_BETA, a, &w).unwrap() + noise * e;
                (w, a, y)
            })
            .collect();
        Dataset::from_rows(spec.columns().to_vec(), &rows).unwrap()
    }

    #[test]
    fn fold_plans() {
        let p = make_folds(10, 5, 1).unwrap();
        assert_eq!(p.sizes(), vec![2; 5]);
        assert_eq!(p, make_folds(10, 5, 1).unwrap());
        assert_ne!(p.assignment(), make_folds(10, 5, 2).unwrap().assignment());
        assert_eq!(make_folds(500, 5, 3).unwrap().sizes(), vec![100; 5]);
        let s = make_folds(13, 4, 3).unwrap().sizes();
        assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        assert!(make_folds(3, 4, 0).is_err());
        assert!(make_folds(10, 1, 0).is_err());
    }

    #[test]
    fn gaussian_plug_in_needs_no_update() {
        let spec = MeanModelSpec::simulation();
        let data = sim(400, 11, 1.0, true);
        let cfg = TmleConfig {
            score: ScoreKind::GaussianAnalytic,
            ..TmleConfig::default()
        };
        let fit = target_fold(&data, &spec, &cfg).unwrap();
        assert_eq!(fit.targeting.epsilon_hat, 0.0);
        assert_eq!(fit.targeting.iterations, 0);
        assert_eq!(fit.beta_targeted.beta, fit.beta_init.beta);
    }

    #[test]
    fn kernel_targeting_solves_equation() {
        let spec = MeanModelSpec::simulation();
        let data = sim(400, 12, 1.0, true);
        let fit = target_fold(&data, &spec, &TmleConfig::default()).unwrap();
        let t = &fit.targeting;
        assert!(t.initial_score.abs() > 0.0);
        assert!(t.residual_score.abs() <= 1e-8 * (1.0 + t.initial_score.abs()), "{t:?}");
        assert!(t.iterations <= 25);

        // starting again from the targeted beta needs no further update
        let design = TrainingDesign::new(&spec, &data);
        let (sbar, info) = design.score_moments(&fit.beta_targeted.beta, fit.context.error_score());
        let inv = linalg::spd_inverse(&info).unwrap();
        let g = linalg::dot(&design.psi_grad, &linalg::mat_vec(&inv, &sbar));
        assert!((g - t.residual_score).abs() < 1e-12);
    }

    #[test]
    fn direction_maximises_information_ratio() {
        let spec = MeanModelSpec::simulation();
        let data = sim(400, 13, 1.0, true);
        let fit = target_fold(&data, &spec, &TmleConfig::default()).unwrap();
        let ctx = &fit.context;
        let ratio = |h: &[f64]| linalg::dot(ctx.psi_grad(), h).powi(2) / linalg::quad_form(ctx.info(), h);
        let best = ratio(&ctx.direction());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..64 {
            let h: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
            assert!(ratio(&h) <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn noiseless_data_recovers_plugin_truth() {
        let spec = MeanModelSpec::simulation();
        let mut data = sim(200, 14, 0.0, false);
        // kernel fit needs residual spread, so use the Gaussian plug-in here
        let cfg = TmleConfig {
            score: ScoreKind::GaussianAnalytic,
            ..TmleConfig::default()
        };
        let truth = crate::effscore::plugin_ate(&spec, &SIM_BETA, &data).unwrap().psi;
        // exact zero residuals have zero variance; add a vanishing perturbation pattern
        let rows: Vec<_> = (0..data.n())
            .map(|i| (data.w(i).to_vec(), data.a(i), data.y(i) + if i % 2 == 0 { 1e-12 } else { -1e-12 }))
            .collect();
        data = Dataset::from_rows(spec.columns().to_vec(), &rows).unwrap();
        let r = cross_fit_estimate(&data, &spec, &cfg, 5).unwrap();
        assert!((r.psi_hat - truth).abs() < 1e-8, "{} vs {truth}", r.psi_hat);
    }

    #[test]
    fn substitution_property_and_interval() {
        let spec = MeanModelSpec::simulation();
        let data = sim(300, 15, 1.0, true);
        let plan = make_folds(300, 5, 77).unwrap();
        let r = cross_fit_with_plan(&data, &spec, &TmleConfig::default(), &plan).unwrap();
        let mut total = 0.0;
        for (i, &f) in plan.assignment().iter().enumerate() {
            total += spec.eval_contrast(&r.per_fold[f].beta_targeted, data.w(i)).unwrap();
        }
        assert!((total / 300.0 - r.psi_hat).abs() < 1e-12);
        assert!((r.ci.0 - (r.psi_hat - 1.96 * r.se)).abs() < 1e-15);
        assert!((r.ci.1 - (r.psi_hat + 1.96 * r.se)).abs() < 1e-15);
        assert_eq!(r.eif_values.len(), 300);
        for f in &r.per_fold {
            assert!(f.targeting.relative_residual() <= 1e-8);
        }
    }

    #[test]
    fn permutation_with_attached_folds_is_invariant() {
        let spec = MeanModelSpec::simulation();
        let data = sim(250, 16, 1.0, true);
        let plan = make_folds(250, 5, 4).unwrap();
        let base = cross_fit_with_plan(&data, &spec, &TmleConfig::default(), &plan).unwrap();
        let mut perm: Vec<usize> = (0..250).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(8));
        let permuted = data.subset(&perm);
        let assignment = perm.iter().map(|&i| plan.assignment()[i]).collect();
        let plan2 = FoldPlan::from_assignment(5, assignment, 4).unwrap();
        let other = cross_fit_with_plan(&permuted, &spec, &TmleConfig::default(), &plan2).unwrap();
        assert!((base.psi_hat - other.psi_hat).abs() < 1e-8, "{} vs {}", base.psi_hat, other.psi_hat);
    }

    #[test]
    fn repeated_cross_fit_variance() {
        let spec = MeanModelSpec::simulation();
        let data = sim(300, 17, 1.0, false);
        let cfg = TmleConfig::default();
        assert!(repeated_cross_fit(&data, &spec, &cfg, 1, 0).is_err());
        let same = repeated_cross_fit_with_seeds(&data, &spec, &cfg, &[5, 5, 5]).unwrap();
        assert_eq!(same.between, 0.0);
        assert_eq!(same.v_rcf, same.within);
        let r = repeated_cross_fit(&data, &spec, &cfg, 4, 21).unwrap();
        assert!(r.v_rcf >= r.within);
        assert_eq!(r.per_split.len(), 4);
        let mean_v: f64 = r.per_split.iter().map(|s| s.variance).sum::<f64>() / 4.0;
        assert!((r.within - mean_v).abs() < 1e-15);
    }

    #[test]
    fn small_training_split_is_rejected() {
        let spec = MeanModelSpec::simulation();
        let data = sim(24, 18, 1.0, false);
        let err = cross_fit_estimate(&data, &spec, &TmleConfig::default(), 1).unwrap_err();
        assert!(matches!(err, Error::Fold { fold: 1, .. }), "{err}");
    }

    #[test]
    fn homogeneous_model_runs() {
        let spec = MeanModelSpec::new(
            vec!["W1".into(), "W2".into(), "W3".into(), "W4".into()],
            vec![Term::Intercept, Term::Treatment, Term::Main { col: "W1".into() }],
        )
        .unwrap();
        let data = sim(200, 19, 1.0, false);
        let r = cross_fit_estimate(&data, &spec, &TmleConfig::default(), 3).unwrap();
        assert!(r.se > 0.0);
    }
}
