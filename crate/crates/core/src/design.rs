//! Observations `(W, A, Y)` and the structured mean model
//! `m(a, w; beta) = sum_j beta_j * phi_j(a, w)`.
//!
//! Because the model is linear in `beta`, the gradient with respect to `beta`
//! is the feature vector `phi(a, w)` itself and the treatment contrast
//! `m(1, w; beta) - m(0, w; beta)` has gradient `phi(1, w) - phi(0, w)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Observations with `p` named covariates per row, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    w: Vec<f64>,
    a: Vec<u8>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(columns: Vec<String>, w: Vec<f64>, a: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        let p = columns.len();
        if n == 0 {
            return Err(Error::Data("dataset must contain at least one row".into()));
        }
        if a.len() != n {
            return Err(Error::Dimension {
                what: "treatment vector",
                expected: n,
                got: a.len(),
            });
        }
        if w.len() != n * p {
            return Err(Error::Dimension {
                what: "covariate matrix",
                expected: n * p,
                got: w.len(),
            });
        }
        if let Some(i) = a.iter().position(|&v| v > 1) {
            return Err(Error::Data(format!("row {i}: treatment must be 0 or 1")));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {i}: outcome is not finite")));
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "row {}: covariate {} is not finite",
                i / p.max(1),
                columns[i % p.max(1)]
            )));
        }
        Ok(Dataset { columns, w, a, y })
    }

    /// Builds a dataset from per-row covariate vectors.
    pub fn from_rows(columns: Vec<String>, rows: &[(Vec<f64>, u8, f64)]) -> Result<Self> {
        let p = columns.len();
        let mut w = Vec::with_capacity(rows.len() * p);
        for (i, (wi, _, _)) in rows.iter().enumerate() {
            if wi.len() != p {
                return Err(Error::Data(format!("row {i}: expected {p} covariates, got {}", wi.len())));
            }
            w.extend_from_slice(wi);
        }
        let a = rows.iter().map(|r| r.1).collect();
        let y = rows.iter().map(|r| r.2).collect();
        Dataset::new(columns, w, a, y)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn w(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.w[i * p..(i + 1) * p]
    }

    pub fn a(&self, i: usize) -> u8 {
        self.a[i]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn treatments(&self) -> &[u8] {
        &self.a
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    /// Column `j` of the covariate matrix.
    pub fn covariate(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.w(i)[j]).collect()
    }

    pub fn treated_count(&self) -> usize {
        self.a.iter().filter(|&&v| v == 1).count()
    }

    /// Copy of the rows at `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let p = self.p();
        let mut w = Vec::with_capacity(idx.len() * p);
        for &i in idx {
            w.extend_from_slice(self.w(i));
        }
        Dataset {
            columns: self.columns.clone(),
            w,
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Fixed nonlinear maps usable inside basis terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTransform {
    Asinh,
    Log1p,
    Square,
    Sin,
}

impl FeatureTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            FeatureTransform::Asinh => x.asinh(),
            FeatureTransform::Log1p => x.ln_1p(),
            FeatureTransform::Square => x * x,
            FeatureTransform::Sin => x.sin(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            FeatureTransform::Asinh => "asinh",
            FeatureTransform::Log1p => "log1p",
            FeatureTransform::Square => "square",
            FeatureTransform::Sin => "sin",
        }
    }
}

/// Declarative basis term over named covariate columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Treatment,
    Main { col: String },
    /// Treatment indicator times a covariate.
    Interaction { col: String },
    Transform { name: FeatureTransform, col: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Feature {
    Intercept,
    Treatment,
    Main(usize),
    Interaction(usize),
    Transform(FeatureTransform, usize),
}

/// Serializable description of a [`MeanModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanModelDesc {
    pub columns: Vec<String>,
    pub terms: Vec<Term>,
}

/// Linear-in-parameters mean model over a fixed covariate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeanModelDesc", into = "MeanModelDesc")]
pub struct MeanModelSpec {
    columns: Vec<String>,
    terms: Vec<Term>,
    features: Vec<Feature>,
    labels: Vec<String>,
}

impl TryFrom<MeanModelDesc> for MeanModelSpec {
    type Error = Error;

    fn try_from(desc: MeanModelDesc) -> Result<Self> {
        MeanModelSpec::new(desc.columns, desc.terms)
    }
}

impl From<MeanModelSpec> for MeanModelDesc {
    fn from(spec: MeanModelSpec) -> Self {
        MeanModelDesc {
            columns: spec.columns,
            terms: spec.terms,
        }
    }
}

impl MeanModelSpec {
    pub fn new(columns: Vec<String>, terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Spec("mean model needs at least one term".into()));
        }
        let index = |col: &str| -> Result<usize> {
            columns
                .iter()
                .position(|c| c == col)
                .ok_or_else(|| Error::Spec(format!("term references unknown column `{col}`")))
        };
        let mut features = Vec::with_capacity(terms.len());
        let mut labels = Vec::with_capacity(terms.len());
        for t in &terms {
            let (f, label) = match t {
                Term::Intercept => (Feature::Intercept, "(intercept)".to_string()),
                Term::Treatment => (Feature::Treatment, "A".to_string()),
                Term::Main { col } => (Feature::Main(index(col)?), col.clone()),
                Term::Interaction { col } => (Feature::Interaction(index(col)?), format!("A:{col}")),
                Term::Transform { name, col } => (
                    Feature::Transform(*name, index(col)?),
                    format!("{}({col})", name.name()),
                ),
            };
            features.push(f);
            labels.push(label);
        }
        Ok(MeanModelSpec {
            columns,
            terms,
            features,
            labels,
        })
    }

    /// `m(a, w) = b0 + b1 a + b2 w + b3 a w` over a single covariate `w`.
    pub fn scalar_interaction() -> Self {
        MeanModelSpec::new(
            vec!["w".into()],
            vec![
                Term::Intercept,
                Term::Treatment,
                Term::Main { col: "w".into() },
                Term::Interaction { col: "w".into() },
            ],
        )
        .expect("valid basis")
    }

    /// Intercept, treatment, main effects of `W1..W4`, and `A*W1`, `A*W3`.
    pub fn simulation() -> Self {
        let cols: Vec<String> = (1..=4).map(|j| format!("W{j}")).collect();
        let mut terms = vec![Term::Intercept, Term::Treatment];
        terms.extend(cols.iter().map(|c| Term::Main { col: c.clone() }));
        terms.push(Term::Interaction { col: "W1".into() });
        terms.push(Term::Interaction { col: "W3".into() });
        MeanModelSpec::new(cols, terms).expect("valid basis")
    }

    /// Number of basis functions `k`.
    pub fn k(&self) -> usize {
        self.features.len()
    }

    /// Covariate dimension `p` the model expects.
    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn has_treatment_terms(&self) -> bool {
        self.features
            .iter()
            .any(|f| matches!(f, Feature::Treatment | Feature::Interaction(_)))
    }

    /// Checks that a dataset has the covariate layout this model was built for.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.columns() != self.columns.as_slice() {
            return Err(Error::Spec(format!(
                "dataset columns {:?} do not match model columns {:?}",
                data.columns(),
                self.columns
            )));
        }
        Ok(())
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.p() {
            return Err(Error::Dimension {
                what: "covariate vector",
                expected: self.p(),
                got: w.len(),
            });
        }
        Ok(())
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.k() {
            return Err(Error::Dimension {
                what: "coefficient vector",
                expected: self.k(),
                got: beta.len(),
            });
        }
        Ok(())
    }

    /// Writes `phi(a, w)` into `out`. Dimensions are the caller's responsibility.
    #[inline]
    pub fn features_into(&self, a: u8, w: &[f64], out: &mut [f64]) {
        let af = a as f64;
        for (o, f) in out.iter_mut().zip(&self.features) {
            *o = match *f {
                Feature::Intercept => 1.0,
                Feature::Treatment => af,
                Feature::Main(j) => w[j],
                Feature::Interaction(j) => af * w[j],
                Feature::Transform(t, j) => t.apply(w[j]),
            };
        }
    }

    /// Writes `phi(1, w) - phi(0, w)` into `out`.
    #[inline]
    pub fn contrast_features_into(&self, w: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.features) {
            *o = match *f {
                Feature::Treatment => 1.0,
                Feature::Interaction(j) => w[j],
                _ => 0.0,
            };
        }
    }

    #[inline]
    pub(crate) fn mean_unchecked(&self, beta: &[f64], a: u8, w: &[f64]) -> f64 {
        let af = a as f64;
        let mut m = 0.0;
        for (b, f) in beta.iter().zip(&self.features) {
            let phi = match *f {
                Feature::Intercept => 1.0,
                Feature::Treatment => af,
                Feature::Main(j) => w[j],
                Feature::Interaction(j) => af * w[j],
                Feature::Transform(t, j) => t.apply(w[j]),
            };
            m += b * phi;
        }
        m
    }

    #[inline]
    pub(crate) fn contrast_unchecked(&self, beta: &[f64], w: &[f64]) -> f64 {
        let mut d = 0.0;
        for (b, f) in beta.iter().zip(&self.features) {
            d += match *f {
                Feature::Treatment => *b,
                Feature::Interaction(j) => b * w[j],
                _ => 0.0,
            };
        }
        d
    }

    /// `m(a, w; beta)`.
    pub fn eval_mean(&self, beta: &[f64], a: u8, w: &[f64]) -> Result<f64> {
        self.check_beta(beta)?;
        self.check_w(w)?;
        Ok(self.mean_unchecked(beta, a, w))
    }

    /// Gradient of the mean in `beta`, i.e. `phi(a, w)`.
    pub fn eval_gradient(&self, a: u8, w: &[f64]) -> Result<Vec<f64>> {
        self.check_w(w)?;
        let mut out = vec![0.0; self.k()];
        self.features_into(a, w, &mut out);
        Ok(out)
    }

    /// Treatment contrast `m(1, w; beta) - m(0, w; beta)`.
    pub fn eval_contrast(&self, beta: &[f64], w: &[f64]) -> Result<f64> {
        self.check_beta(beta)?;
        self.check_w(w)?;
        Ok(self.contrast_unchecked(beta, w))
    }

    /// Gradient of the contrast in `beta`: `phi(1, w) - phi(0, w)`.
    pub fn contrast_gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_w(w)?;
        let mut out = vec![0.0; self.k()];
        self.contrast_features_into(w, &mut out);
        Ok(out)
    }

    /// `n x k` design matrix of `phi(a_i, w_i)`.
    pub fn design_matrix(&self, data: &Dataset) -> DMatrix<f64> {
        let k = self.k();
        let mut row = vec![0.0; k];
        let mut x = DMatrix::zeros(data.n(), k);
        for i in 0..data.n() {
            self.features_into(data.a(i), data.w(i), &mut row);
            for j in 0..k {
                x[(i, j)] = row[j];
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaSource {
    InitialOls,
    Targeted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta: Vec<f64>,
    pub source: BetaSource,
    pub fold_id: Option<usize>,
}

/// Ordinary least squares fit of the mean model, with the SVD-based inverse
/// Gram matrix retained for model-based standard errors.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub estimate: BetaEstimate,
    pub residuals: Vec<f64>,
    pub xtx_inv: DMatrix<f64>,
}

/// Least-squares minimiser of `sum_i (y_i - m(a_i, w_i; beta))^2`.
pub fn fit_ols(spec: &MeanModelSpec, data: &Dataset) -> Result<BetaEstimate> {
    fit_ols_full(spec, data).map(|f| f.estimate)
}

pub fn fit_ols_full(spec: &MeanModelSpec, data: &Dataset) -> Result<OlsFit> {
    spec.check_dataset(data)?;
    let k = spec.k();
    if data.n() < k {
        return Err(Error::InsufficientData {
            needed: k,
            got: data.n(),
        });
    }
    let x = spec.design_matrix(data);
    let y = DVector::from_column_slice(data.outcomes());
    let ls = linalg::lstsq(&x, &y).map_err(|cols| Error::SingularDesign {
        columns: cols.into_iter().map(|c| spec.labels()[c].clone()).collect(),
    })?;
    let fitted = &x * &ls.beta;
    let residuals = (y - fitted).iter().cloned().collect();
    Ok(OlsFit {
        estimate: BetaEstimate {
            beta: ls.beta.iter().cloned().collect(),
            source: BetaSource::InitialOls,
            fold_id: None,
        },
        residuals,
        xtx_inv: ls.xtx_inv,
    })
}
