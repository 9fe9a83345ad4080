//! Efficient score for the regression parameter, its information matrix and
//! the influence functions for `beta` and for the average treatment effect.
//!
//! With `e = y - m(a, w; beta)`, `g = phi(a, w)` and `gbar = E[phi]`, the
//! parametric score `-g * l'(e)` projected away from mean-zero functions of
//! `X = (A, W)` and from error perturbations `a(e)` with `E a = E[e a] = 0` is
//!
//! ```text
//! S(O) = (g - gbar) * (-l'(e)) + gbar * e / v
//! ```
//!
//! The first term has conditional mean zero given `X` because `E l'(e) = 0`;
//! the second is the least-squares direction along the intercept, which is the
//! only component of the naive score the mean-zero restriction keeps.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{Dataset, MeanModelSpec};
use crate::error::{Error, Result};
use crate::errordist::ErrorScore;
use crate::linalg;

/// Plug-in average treatment effect with its gradient in `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiEstimate {
    pub psi: f64,
    pub grad: Vec<f64>,
    pub bound: Option<f64>,
}

/// Training-set design cache: features, outcomes and the two
/// training-fold averages that enter the efficient score.
#[derive(Debug, Clone)]
pub(crate) struct TrainingDesign {
    k: usize,
    phi: Vec<f64>,
    y: Vec<f64>,
    pub(crate) gbar: Vec<f64>,
    pub(crate) psi_grad: Vec<f64>,
}

impl TrainingDesign {
    pub(crate) fn new(spec: &MeanModelSpec, data: &Dataset) -> Self {
        let (n, k) = (data.n(), spec.k());
        let mut phi = vec![0.0; n * k];
        let mut gbar = vec![0.0; k];
        let mut psi_grad = vec![0.0; k];
        let mut c = vec![0.0; k];
        for i in 0..n {
            let row = &mut phi[i * k..(i + 1) * k];
            spec.features_into(data.a(i), data.w(i), row);
            spec.contrast_features_into(data.w(i), &mut c);
            for j in 0..k {
                gbar[j] += row[j];
                psi_grad[j] += c[j];
            }
        }
        for j in 0..k {
            gbar[j] /= n as f64;
            psi_grad[j] /= n as f64;
        }
        TrainingDesign {
            k,
            phi,
            y: data.outcomes().to_vec(),
            gbar,
            psi_grad,
        }
    }

    pub(crate) fn n(&self) -> usize {
        self.y.len()
    }

    /// Mean efficient score and the outer-product information matrix at `beta`.
    pub(crate) fn score_moments(&self, beta: &[f64], score: &dyn ErrorScore) -> (Vec<f64>, DMatrix<f64>) {
        let k = self.k;
        let n = self.n();
        let inv_v = 1.0 / score.variance();
        let mut mean = vec![0.0; k];
        let mut info = DMatrix::zeros(k, k);
        let mut s = vec![0.0; k];
        for i in 0..n {
            let row = &self.phi[i * k..(i + 1) * k];
            let e = self.y[i] - linalg::dot(row, beta);
            let neg_l = -score.score(e);
            let ev = e * inv_v;
            for j in 0..k {
                s[j] = (row[j] - self.gbar[j]) * neg_l + self.gbar[j] * ev;
                mean[j] += s[j];
            }
            for a in 0..k {
                for b in a..k {
                    info[(a, b)] += s[a] * s[b];
                }
            }
        }
        let nf = n as f64;
        for a in 0..k {
            mean[a] /= nf;
            for b in a..k {
                let v = info[(a, b)] / nf;
                info[(a, b)] = v;
                info[(b, a)] = v;
            }
        }
        (mean, info)
    }
}

/// Empirical information matrix: the training-fold average of `S S'`, with
/// `gbar` the fold's own mean feature vector.
pub fn information_matrix(
    spec: &MeanModelSpec,
    beta: &[f64],
    score: &dyn ErrorScore,
    train: &Dataset,
) -> Result<DMatrix<f64>> {
    spec.check_dataset(train)?;
    if train.n() < spec.k() {
        return Err(Error::InsufficientData {
            needed: spec.k(),
            got: train.n(),
        });
    }
    let design = TrainingDesign::new(spec, train);
    let (_, info) = design.score_moments(beta, score);
    linalg::spd_inverse(&info)?;
    Ok(info)
}

/// Everything needed to evaluate efficient scores and influence functions at
/// a fixed `beta` and error score. Immutable after construction.
#[derive(Debug, Clone)]
pub struct EffScoreContext {
    spec: MeanModelSpec,
    beta: Vec<f64>,
    score: Arc<dyn ErrorScore>,
    gbar: Vec<f64>,
    psi_grad: Vec<f64>,
    info: DMatrix<f64>,
    info_inv: DMatrix<f64>,
}

impl EffScoreContext {
    /// Builds the context from a training sample: `gbar` and `psi_grad` are
    /// training means and the information matrix is the training average of
    /// `S S'` at `beta`.
    pub fn fit(
        spec: &MeanModelSpec,
        beta: &[f64],
        score: Arc<dyn ErrorScore>,
        train: &Dataset,
    ) -> Result<Self> {
        spec.check_dataset(train)?;
        if beta.len() != spec.k() {
            return Err(Error::Dimension {
                what: "coefficient vector",
                expected: spec.k(),
                got: beta.len(),
            });
        }
        if train.n() < spec.k() {
            return Err(Error::InsufficientData {
                needed: spec.k(),
                got: train.n(),
            });
        }
        let design = TrainingDesign::new(spec, train);
        let (_, info) = design.score_moments(beta, score.as_ref());
        Self::assemble(spec, beta, score, design.gbar, design.psi_grad, info)
    }

    /// Builds the context from explicit components.
    pub fn from_parts(
        spec: &MeanModelSpec,
        beta: &[f64],
        score: Arc<dyn ErrorScore>,
        gbar: Vec<f64>,
        psi_grad: Vec<f64>,
        info: DMatrix<f64>,
    ) -> Result<Self> {
        let k = spec.k();
        for (what, len) in [("coefficient vector", beta.len()), ("gbar", gbar.len()), ("psi_grad", psi_grad.len())] {
            if len != k {
                return Err(Error::Dimension { what, expected: k, got: len });
            }
        }
        if info.nrows() != k || info.ncols() != k {
            return Err(Error::Dimension {
                what: "information matrix",
                expected: k,
                got: info.nrows(),
            });
        }
        if (&info - info.transpose()).amax() > 1e-12 * info.amax().max(1.0) {
            return Err(Error::InvalidArgument("information matrix must be symmetric".into()));
        }
        Self::assemble(spec, beta, score, gbar, psi_grad, info)
    }

    pub(crate) fn assemble(
        spec: &MeanModelSpec,
        beta: &[f64],
        score: Arc<dyn ErrorScore>,
        gbar: Vec<f64>,
        psi_grad: Vec<f64>,
        info: DMatrix<f64>,
    ) -> Result<Self> {
        let info_inv = linalg::spd_inverse(&info)?;
        Ok(EffScoreContext {
            spec: spec.clone(),
            beta: beta.to_vec(),
            score,
            gbar,
            psi_grad,
            info,
            info_inv,
        })
    }

    pub fn spec(&self) -> &MeanModelSpec {
        &self.spec
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gbar(&self) -> &[f64] {
        &self.gbar
    }

    pub fn psi_grad(&self) -> &[f64] {
        &self.psi_grad
    }

    pub fn info(&self) -> &DMatrix<f64> {
        &self.info
    }

    pub fn info_inv(&self) -> &DMatrix<f64> {
        &self.info_inv
    }

    pub fn error_score(&self) -> &dyn ErrorScore {
        self.score.as_ref()
    }

    /// `I^{-1} psi_grad`, the least favourable direction in `beta`.
    pub fn direction(&self) -> Vec<f64> {
        linalg::mat_vec(&self.info_inv, &self.psi_grad)
    }

    /// Efficient score `S(O)` for a single observation.
    pub fn efficient_score(&self, w: &[f64], a: u8, y: f64) -> Vec<f64> {
        let k = self.spec.k();
        let mut phi = vec![0.0; k];
        self.spec.features_into(a, w, &mut phi);
        let e = y - linalg::dot(&phi, &self.beta);
        let neg_l = -self.score.score(e);
        let ev = e / self.score.variance();
        (0..k)
            .map(|j| (phi[j] - self.gbar[j]) * neg_l + self.gbar[j] * ev)
            .collect()
    }

    /// Influence function for `beta`: `I^{-1} S(O)`.
    pub fn eif_beta(&self, w: &[f64], a: u8, y: f64) -> Vec<f64> {
        linalg::mat_vec(&self.info_inv, &self.efficient_score(w, a, y))
    }

    /// Regression component `psi_grad' I^{-1} S(O)` of the ATE influence function.
    pub fn eif_regression_part(&self, w: &[f64], a: u8, y: f64) -> f64 {
        linalg::dot(&self.psi_grad, &self.eif_beta(w, a, y))
    }

    /// ATE influence function `{Delta(w) - psi_hat} + psi_grad' I^{-1} S(O)`.
    pub fn eif_psi(&self, psi_hat: f64, w: &[f64], a: u8, y: f64) -> f64 {
        let delta = self.spec.contrast_unchecked(&self.beta, w);
        (delta - psi_hat) + self.eif_regression_part(w, a, y)
    }

    /// `Var{Delta(W)}` over `sample` plus `psi_grad' I^{-1} psi_grad`.
    pub fn efficiency_bound(&self, sample: &Dataset) -> f64 {
        let n = sample.n();
        let deltas: Vec<f64> = (0..n)
            .map(|i| self.spec.contrast_unchecked(&self.beta, sample.w(i)))
            .collect();
        let var = if n > 1 {
            let m = deltas.iter().sum::<f64>() / n as f64;
            deltas.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        var + linalg::quad_form(&self.info_inv, &self.psi_grad)
    }

    /// Variance of the regression component alone.
    pub fn regression_bound(&self) -> f64 {
        linalg::quad_form(&self.info_inv, &self.psi_grad)
    }
}

/// Plug-in ATE: average of `Delta_beta(W_i)` over the sample, with the average
/// contrast gradient.
pub fn plugin_ate(spec: &MeanModelSpec, beta: &[f64], sample: &Dataset) -> Result<PsiEstimate> {
    spec.check_dataset(sample)?;
    if beta.len() != spec.k() {
        return Err(Error::Dimension {
            what: "coefficient vector",
            expected: spec.k(),
            got: beta.len(),
        });
    }
    let n = sample.n();
    if n == 0 {
        return Err(Error::Data("plug-in ATE needs a nonempty covariate sample".into()));
    }
    let k = spec.k();
    let mut grad = vec![0.0; k];
    let mut c = vec![0.0; k];
    let mut psi = 0.0;
    for i in 0..n {
        psi += spec.contrast_unchecked(beta, sample.w(i));
        spec.contrast_features_into(sample.w(i), &mut c);
        for j in 0..k {
            grad[j] += c[j];
        }
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok(PsiEstimate {
        psi: psi / n as f64,
        grad,
        bound: None,
    })
}
