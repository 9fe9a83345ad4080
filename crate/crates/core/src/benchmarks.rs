//! Comparison estimators: the Gaussian working-model OLS plug-in and
//! cross-fitted AIPW built on the nonparametric influence function
//!
//! ```text
//! a/g (y - mu1) - (1-a)/(1-g) (y - mu0) + mu1 - mu0 - psi
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{fit_ols_full, Dataset, MeanModelSpec};
use crate::error::{Error, Result};
use crate::seeds::{self, Purpose};
use crate::tmle::{combine_splits, make_folds, FoldPlan};
use crate::{linalg, par, Z_95};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsAte {
    pub psi: f64,
    pub se: f64,
    pub ci: (f64, f64),
    /// `c' sigma^2 (X'X)^{-1} c`.
    pub coef_variance: f64,
    /// Sample variance of the fitted contrasts over `n`.
    pub marginal_variance: f64,
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

impl OlsAte {
    pub fn variance(&self) -> f64 {
        self.coef_variance + self.marginal_variance
    }
}

/// Full-sample OLS plug-in estimate of the ATE with a delta-method variance
/// that adds the coefficient term and the term from averaging over `W`.
pub fn ols_ate(data: &Dataset, spec: &MeanModelSpec) -> Result<OlsAte> {
    let fit = fit_ols_full(spec, data)?;
    let (n, k) = (data.n(), spec.k());
    if n <= k {
        return Err(Error::InsufficientData { needed: k + 1, got: n });
    }
    let beta = fit.estimate.beta;
    let nf = n as f64;
    let mut c = vec![0.0; k];
    let mut g = vec![0.0; k];
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n {
        spec.contrast_features_into(data.w(i), &mut g);
        for j in 0..k {
            c[j] += g[j] / nf;
        }
        deltas.push(linalg::dot(&g, &beta));
    }
    let psi = deltas.iter().sum::<f64>() / nf;
    let var_delta = deltas.iter().map(|d| (d - psi).powi(2)).sum::<f64>() / (nf - 1.0);
    let sigma2 = fit.residuals.iter().map(|r| r * r).sum::<f64>() / (nf - k as f64);
    let coef_variance = sigma2 * linalg::quad_form(&fit.xtx_inv, &c);
    let marginal_variance = var_delta / nf;
    let se = (coef_variance + marginal_variance).sqrt();
    Ok(OlsAte {
        psi,
        se,
        ci: (psi - Z_95 * se, psi + Z_95 * se),
        coef_variance,
        marginal_variance,
        beta,
        sigma2,
    })
}

/// Logistic propensity model with intercept-first coefficients and
/// truncation bounds applied to predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub gamma: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl PropensityModel {
    pub fn new(gamma: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if !(0.0 < lower && lower < upper && upper < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation bounds must satisfy 0 < lower < upper < 1 (got {lower}, {upper})"
            )));
        }
        Ok(PropensityModel { gamma, lower, upper })
    }

    pub fn with_bounds(self, lower: f64, upper: f64) -> Result<Self> {
        PropensityModel::new(self.gamma, lower, upper)
    }

    pub fn linear_predictor(&self, w: &[f64]) -> f64 {
        self.gamma[0] + self.gamma[1..].iter().zip(w).map(|(g, x)| g * x).sum::<f64>()
    }

    pub fn untruncated(&self, w: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(w))
    }

    pub fn predict(&self, w: &[f64]) -> f64 {
        self.truncate(self.untruncated(w))
    }

    pub fn truncate(&self, p: f64) -> f64 {
        p.clamp(self.lower, self.upper)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(x: &DMatrix<f64>, labels: &[u8], gamma: &DVector<f64>) -> f64 {
    let eta = x * gamma;
    eta.iter()
        .zip(labels)
        .map(|(&e, &a)| {
            // log(1 + exp(e)) computed stably
            let sp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            a as f64 * e - sp
        })
        .sum()
}

/// Maximum-likelihood logistic regression on `(1, covariates)` by Newton
/// iterations with step halving. The returned model is effectively
/// untruncated; attach bounds with [`PropensityModel::with_bounds`].
pub fn fit_logistic(covariates: &[Vec<f64>], labels: &[u8]) -> Result<PropensityModel> {
    let n = labels.len();
    if covariates.len() != n {
        return Err(Error::Dimension {
            what: "covariate rows",
            expected: n,
            got: covariates.len(),
        });
    }
    let d = covariates.first().map_or(0, |r| r.len()) + 1;
    if n < d + 1 {
        return Err(Error::InsufficientData { needed: d + 1, got: n });
    }
    let ones = labels.iter().filter(|&&a| a == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::Data("logistic regression needs both classes present".into()));
    }
    let mut x = DMatrix::zeros(n, d);
    for (i, row) in covariates.iter().enumerate() {
        if row.len() != d - 1 {
            return Err(Error::Dimension {
                what: "covariate row",
                expected: d - 1,
                got: row.len(),
            });
        }
        x[(i, 0)] = 1.0;
        for (j, v) in row.iter().enumerate() {
            x[(i, j + 1)] = *v;
        }
    }
    let y = DVector::from_iterator(n, labels.iter().map(|&a| a as f64));
    let mut gamma = DVector::zeros(d);
    let pbar = ones as f64 / n as f64;
    gamma[0] = (pbar / (1.0 - pbar)).ln();
    let mut ll = log_likelihood(&x, labels, &gamma);
    let nf = n as f64;

    // converged when the mean score vanishes and Newton has stopped moving;
    // under separation the score vanishes while the coefficients keep growing
    for _ in 0..100 {
        let eta = &x * &gamma;
        let p = eta.map(sigmoid);
        let grad = x.transpose() * (&y - &p);
        let mut xw = x.clone();
        for i in 0..n {
            let wi = (p[i] * (1.0 - p[i])).max(1e-300);
            xw.row_mut(i).scale_mut(wi);
        }
        let hess = x.transpose() * xw;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match hess.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };
        if grad.amax() / nf <= 1e-8 && step.amax() <= 1e-6 * (1.0 + gamma.amax()) {
            return PropensityModel::new(gamma.iter().cloned().collect(), f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        }
        if gamma.norm() > 1e3 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &gamma + &step * t;
            let cand_ll = log_likelihood(&x, labels, &cand);
            if cand_ll >= ll - 1e-12 * ll.abs() {
                gamma = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let eta = &x * &gamma;
    let grad = x.transpose() * (&y - eta.map(sigmoid));
    Err(Error::LogisticNonConvergence(format!(
        "coefficient norm {:.3e}, gradient max-norm {:.3e}; the classes may be separable",
        gamma.norm(),
        grad.amax() / nf
    )))
}

/// Nonparametric ATE influence value for one observation.
pub fn np_eif(a: u8, y: f64, g: f64, mu1: f64, mu0: f64, psi: f64) -> Result<f64> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::InvalidArgument(format!("propensity {g} outside (0, 1)")));
    }
    let af = a as f64;
    Ok(af / g * (y - mu1) - (1.0 - af) / (1.0 - g) * (y - mu0) + mu1 - mu0 - psi)
}

/// Point estimate and variance from pseudo-outcomes `Gamma_i`:
/// `(mean, sample variance / n)`.
pub fn aipw_from_nuisances(data: &Dataset, g: &[f64], mu1: &[f64], mu0: &[f64]) -> Result<(f64, f64)> {
    let n = data.n();
    for (what, len) in [("propensities", g.len()), ("mu1", mu1.len()), ("mu0", mu0.len())] {
        if len != n {
            return Err(Error::Dimension { what, expected: n, got: len });
        }
    }
    let pseudo = (0..n)
        .map(|i| np_eif(data.a(i), data.y(i), g[i], mu1[i], mu0[i], 0.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_and_variance(&pseudo))
}

fn mean_and_variance(pseudo: &[f64]) -> (f64, f64) {
    let nf = pseudo.len() as f64;
    let psi = pseudo.iter().sum::<f64>() / nf;
    let var = pseudo.iter().map(|p| (p - psi).powi(2)).sum::<f64>() / (nf - 1.0);
    (psi, var / nf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AipwConfig {
    pub folds: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for AipwConfig {
    fn default() -> Self {
        AipwConfig {
            folds: 5,
            lower: 0.02,
            upper: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AipwSplit {
    pub seed: u64,
    pub psi: f64,
    pub variance: f64,
    /// Share of held-out propensities that hit a truncation bound.
    pub truncated_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AipwResult {
    pub b: usize,
    pub per_split: Vec<AipwSplit>,
    pub psi_hat: f64,
    pub v_rcf: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub within: f64,
    pub between: f64,
}

impl AipwResult {
    pub fn split_sd(&self) -> f64 {
        self.between.sqrt()
    }
}

/// Least squares of `y` on `(1, w)` for the rows in `idx`.
fn arm_regression(data: &Dataset, idx: &[usize]) -> Result<Vec<f64>> {
    let d = data.p() + 1;
    if idx.len() < d {
        return Err(Error::InsufficientData { needed: d, got: idx.len() });
    }
    let mut x = DMatrix::zeros(idx.len(), d);
    let mut y = DVector::zeros(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        x[(r, 0)] = 1.0;
        for (j, v) in data.w(i).iter().enumerate() {
            x[(r, j + 1)] = *v;
        }
        y[r] = data.y(i);
    }
    let ls = linalg::lstsq(&x, &y).map_err(|cols| Error::SingularDesign {
        columns: cols
            .into_iter()
            .map(|c| if c == 0 { "(intercept)".to_string() } else { data.columns()[c - 1].clone() })
            .collect(),
    })?;
    Ok(ls.beta.iter().cloned().collect())
}

fn linear(coef: &[f64], w: &[f64]) -> f64 {
    coef[0] + coef[1..].iter().zip(w).map(|(c, x)| c * x).sum::<f64>()
}

/// One cross-fitted AIPW split: `(psi_b, V_b, truncated share)`.
pub fn aipw_with_plan(data: &Dataset, cfg: &AipwConfig, plan: &FoldPlan) -> Result<(f64, f64, f64)> {
    let n = data.n();
    let per_fold = par::map_indexed(plan.k(), |f| -> Result<Vec<(usize, f64, bool)>> {
        let (train, held) = plan.split(f);
        let treated: Vec<usize> = train.iter().copied().filter(|&i| data.a(i) == 1).collect();
        let control: Vec<usize> = train.iter().copied().filter(|&i| data.a(i) == 0).collect();
        if treated.is_empty() || control.is_empty() {
            return Err(Error::Data("training split has an empty treatment arm".into()).in_fold(f + 1));
        }
        let rows: Vec<Vec<f64>> = train.iter().map(|&i| data.w(i).to_vec()).collect();
        let labels: Vec<u8> = train.iter().map(|&i| data.a(i)).collect();
        let prop = fit_logistic(&rows, &labels)
            .and_then(|m| m.with_bounds(cfg.lower, cfg.upper))
            .map_err(|e| e.in_fold(f + 1))?;
        let b1 = arm_regression(data, &treated).map_err(|e| e.in_fold(f + 1))?;
        let b0 = arm_regression(data, &control).map_err(|e| e.in_fold(f + 1))?;
        held.iter()
            .map(|&i| {
                let w = data.w(i);
                let raw = prop.untruncated(w);
                let g = prop.truncate(raw);
                let v = np_eif(data.a(i), data.y(i), g, linear(&b1, w), linear(&b0, w), 0.0)?;
                Ok((i, v, g != raw))
            })
            .collect()
    });
    let mut pseudo = vec![0.0; n];
    let mut clipped = 0usize;
    for fold in per_fold {
        for (i, v, c) in fold? {
            pseudo[i] = v;
            clipped += c as usize;
        }
    }
    let (psi, var) = mean_and_variance(&pseudo);
    Ok((psi, var, clipped as f64 / n as f64))
}

/// Repeated cross-fitted AIPW with `b` partitions derived from `master_seed`.
pub fn aipw_estimate(data: &Dataset, cfg: &AipwConfig, b: usize, master_seed: u64) -> Result<AipwResult> {
    if b < 1 {
        return Err(Error::InvalidArgument("AIPW needs at least one split".into()));
    }
    if data.treated_count() == 0 || data.treated_count() == data.n() {
        return Err(Error::Data("both treatment arms must be present".into()));
    }
    let seeds: Vec<u64> = (0..b as u64)
        .map(|i| seeds::derive(master_seed, i, Purpose::AipwPartition))
        .collect();
    let runs = par::map_indexed(b, |s| {
        let plan = make_folds(data.n(), cfg.folds, seeds[s])?;
        aipw_with_plan(data, cfg, &plan)
    });
    let mut per_split = Vec::with_capacity(b);
    for (seed, run) in seeds.iter().zip(runs) {
        let (psi, variance, truncated_share) = run?;
        per_split.push(AipwSplit {
            seed: *seed,
            psi,
            variance,
            truncated_share,
        });
    }
    let psis: Vec<f64> = per_split.iter().map(|s| s.psi).collect();
    let vars: Vec<f64> = per_split.iter().map(|s| s.variance).collect();
    let (psi_hat, v_rcf, within, between) = combine_splits(&psis, &vars);
    let se = v_rcf.sqrt();
    Ok(AipwResult {
        b,
        per_split,
        psi_hat,
        v_rcf,
        se,
        ci: (psi_hat - Z_95 * se, psi_hat + Z_95 * se),
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

    fn toy(n: usize, seed: u64, effect: f64, noise: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<_> = (0..n)
            .map(|_| {
                let w: f64 = StandardNormal.sample(&mut rng);
                let a = (rng.random::<f64>() < sigmoid(0.4 * w)) as u8;
                let e: f64 = StandardNormal.sample(&mut rng);
                (vec![w], a, 0.3 + effect * a as f64 + 0.8 * w + noise * e)
            })
            .collect();
        Dataset::from_rows(vec!["w".into()], &rows).unwrap()
    }

    fn homogeneous() -> MeanModelSpec {
        MeanModelSpec::new(
            vec!["w".into()],
            vec![Term::Intercept, Term::Treatment, Term::Main { col: "w".into() }],
        )
        .unwrap()
    }

    #[test]
    fn ols_homogeneous_matches_textbook_se() {
        let data = toy(300, 1, 0.5, 1.0);
        let spec = homogeneous();
        let r = ols_ate(&data, &spec).unwrap();
        assert!(r.marginal_variance < 1e-25);
        let fit = fit_ols_full(&spec, &data).unwrap();
        let textbook = (r.sigma2 * fit.xtx_inv[(1, 1)]).sqrt();
        assert!((r.se - textbook).abs() < 1e-12);
        assert!((r.psi - fit.estimate.beta[1]).abs() < 1e-12);
        assert!((r.variance() - r.se * r.se).abs() < 1e-15);
    }

    #[test]
    fn ols_noiseless_is_exact() {
        let data = toy(100, 2, 0.5, 0.0);
        let r = ols_ate(&data, &homogeneous()).unwrap();
        assert!((r.psi - 0.5).abs() < 1e-12);
        assert!(r.se < 1e-10);
    }

    #[test]
    fn np_eif_arithmetic() {
        assert_eq!(np_eif(1, 2.0, 0.3, 2.0, 1.5, 0.5).unwrap(), 0.0);
        assert_eq!(np_eif(1, 3.0, 0.5, 2.0, 1.0, 1.0).unwrap(), 2.0);
        assert!(np_eif(1, 3.0, 1.0, 2.0, 1.0, 1.0).is_err());
        assert!(np_eif(0, 3.0, 0.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn logistic_intercept_only() {
        let labels: Vec<u8> = (0..50).map(|i| (i % 5 == 0) as u8).collect();
        let rows = vec![Vec::new(); 50];
        let m = fit_logistic(&rows, &labels).unwrap();
        assert!((m.gamma[0] - (0.2f64 / 0.8).ln()).abs() < 1e-10);
    }

    #[test]
    fn logistic_separation_and_single_class() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let labels: Vec<u8> = (0..20).map(|i| (i >= 10) as u8).collect();
        assert!(matches!(fit_logistic(&rows, &labels), Err(Error::LogisticNonConvergence(_))));
        assert!(fit_logistic(&rows, &[1; 20]).is_err());
    }

    #[test]
    fn logistic_gradient_vanishes() {
        let data = toy(400, 3, 0.5, 1.0);
        let rows: Vec<Vec<f64>> = (0..400).map(|i| data.w(i).to_vec()).collect();
        let m = fit_logistic(&rows, data.treatments()).unwrap();
        let mut grad = [0.0; 2];
        for i in 0..400 {
            let r = data.a(i) as f64 - m.untruncated(data.w(i));
            grad[0] += r;
            grad[1] += r * data.w(i)[0];
        }
        assert!(grad.iter().all(|g| g.abs() / 400.0 <= 1e-8), "{grad:?}");
        assert!((m.gamma[1] - 0.4).abs() < 0.35);
    }

    #[test]
    fn truncation_is_idempotent() {
        let m = PropensityModel::new(vec![3.0, 2.0], 0.02, 0.98).unwrap();
        for w in [-10.0, -1.0, 0.0, 1.0, 10.0] {
            let p = m.predict(&[w]);
            assert!((0.02..=0.98).contains(&p));
            assert_eq!(m.truncate(p), p);
        }
        assert!(PropensityModel::new(vec![0.0], 0.5, 0.4).is_err());
    }

    #[test]
    fn constant_propensity_exact_outcomes_collapse() {
        let data = toy(60, 4, 0.7, 1.0);
        let g = vec![0.5; 60];
        let truth = |a: u8, w: f64| 0.3 + 0.7 * a as f64 + 0.8 * w;
        // outcome models reproduce y exactly for the observed arm
        let mu1: Vec<f64> = (0..60)
            .map(|i| if data.a(i) == 1 { data.y(i) } else { truth(1, data.w(i)[0]) })
            .collect();
        let mu0: Vec<f64> = (0..60)
            .map(|i| if data.a(i) == 0 { data.y(i) } else { truth(0, data.w(i)[0]) })
            .collect();
        let (psi, _) = aipw_from_nuisances(&data, &g, &mu1, &mu0).unwrap();
        let mean_delta = (0..60).map(|i| mu1[i] - mu0[i]).sum::<f64>() / 60.0;
        assert!((psi - mean_delta).abs() < 1e-12);
    }

    #[test]
    fn aipw_runs_and_combines() {
        let data = toy(400, 5, 0.5, 1.0);
        let r = aipw_estimate(&data, &AipwConfig::default(), 3, 9).unwrap();
        assert_eq!(r.per_split.len(), 3);
        assert!((r.psi_hat - 0.5).abs() < 0.4);
        assert!(r.v_rcf >= r.within);
        assert_eq!(r, aipw_estimate(&data, &AipwConfig::default(), 3, 9).unwrap());
    }

    #[test]
    fn aipw_empty_arm_is_an_error() {
        let rows: Vec<_> = (0..40).map(|i| (vec![i as f64], (i == 0) as u8, 1.0)).collect();
        let data = Dataset::from_rows(vec!["w".into()], &rows).unwrap();
        assert!(aipw_estimate(&data, &AipwConfig::default(), 1, 1).is_err());
    }
}
