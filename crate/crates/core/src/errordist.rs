//! Gaussian-kernel estimate of the error density and of its log-density
//! derivative (the location score), with a density floor and a score clip.
//!
//! The fitted model keeps the sorted residuals and evaluates
//!
//! ```text
//! f(u)  = 1/(n h) sum_i phi((u - e_i)/h)
//! f'(u) = -1/(n h^2) sum_i z_i phi(z_i)
//! score(u) = clip(f'(u) / max(f(u), floor), [-c, c])
//! ```
//!
//! Kernel sums are truncated at `|z| > 8`, where the Gaussian kernel is below
//! `1.3e-14` of its peak. For speed, `f` and `f'` are tabulated on a uniform
//! grid of spacing about `h/16` covering the residual range and read back by
//! cubic Hermite interpolation using the exact first and second derivatives at
//! the nodes. Outside the grid the sums are evaluated directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-density derivative of an additive error law.
pub trait ErrorScore: Send + Sync + std::fmt::Debug {
    /// `d/du log f(u)`, possibly stabilised.
    fn score(&self, u: f64) -> f64;
    /// Error variance used by the mean-zero part of the efficient score.
    fn variance(&self) -> f64;
}

/// Exact score of a centred normal law, `-u / v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianScore {
    pub variance: f64,
}

impl ErrorScore for GaussianScore {
    fn score(&self, u: f64) -> f64 {
        -u / self.variance
    }

    fn variance(&self) -> f64 {
        self.variance
    }
}

pub const MIN_RESIDUALS: usize = 20;
const WINDOW: f64 = 8.0;
const FLOOR_GRID: usize = 512;
const FLOOR_REL: f64 = 1e-4;
const CLIP_MULT: f64 = 10.0;
const NODES_PER_BANDWIDTH: f64 = 16.0;
const MAX_NODES: usize = 400_000;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone)]
struct Table {
    lo: f64,
    hi: f64,
    step: f64,
    f: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

/// Fitted kernel density of training residuals. Immutable once fitted.
#[derive(Debug, Clone)]
pub struct ErrorDensityModel {
    sorted: Vec<f64>,
    h: f64,
    floor: f64,
    clip: f64,
    v_hat: f64,
    i1_raw: f64,
    i1_hat: f64,
    table: Option<Table>,
}

/// Summary of a fitted density, emitted in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityDiagnostics {
    pub h: f64,
    pub delta: f64,
    pub c: f64,
    pub v_hat: f64,
    pub i1_hat: f64,
    pub mean_score: f64,
    pub mean_eps_score: f64,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `1.06 * min(sd, IQR/1.349) * n^(-1/5)`.
pub fn silverman_bandwidth(sorted: &[f64], sd: f64) -> f64 {
    let n = sorted.len() as f64;
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let robust = iqr / 1.349;
    let spread = if robust > 0.0 { sd.min(robust) } else { sd };
    1.06 * spread * n.powf(-0.2)
}

/// Fits the kernel density model to training-fold residuals.
pub fn fit_density(residuals: &[f64]) -> Result<ErrorDensityModel> {
    let n = residuals.len();
    if n < MIN_RESIDUALS {
        return Err(Error::InsufficientData {
            needed: MIN_RESIDUALS,
            got: n,
        });
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::Data("residuals must be finite".into()));
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let v_hat = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(v_hat > 0.0) {
        return Err(Error::DegenerateResiduals);
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let h = silverman_bandwidth(&sorted, v_hat.sqrt());

    let mut model = ErrorDensityModel {
        sorted,
        h,
        floor: 0.0,
        clip: f64::INFINITY,
        v_hat,
        i1_raw: 0.0,
        i1_hat: 0.0,
        table: None,
    };

    let (min, max) = (model.sorted[0], model.sorted[n - 1]);
    let (glo, ghi) = (min - 3.0 * h, max + 3.0 * h);
    let gstep = (ghi - glo) / (FLOOR_GRID - 1) as f64;
    let fmax = (0..FLOOR_GRID)
        .map(|i| model.sums(glo + gstep * i as f64).0)
        .fold(0.0, f64::max);
    model.floor = FLOOR_REL * fmax;
    model.table = model.build_table();

    let raw: Vec<f64> = residuals.iter().map(|&r| model.score(r)).collect();
    model.i1_raw = raw.iter().map(|s| s * s).sum::<f64>() / n as f64;
    model.clip = if model.i1_raw > 0.0 {
        CLIP_MULT * model.i1_raw.sqrt()
    } else {
        f64::MIN_POSITIVE
    };
    let c2 = model.clip * model.clip;
    model.i1_hat = raw.iter().map(|s| (s * s).min(c2)).sum::<f64>() / n as f64;
    Ok(model)
}

impl ErrorDensityModel {
    /// Direct kernel sums `(f, f', f'')` at `u`.
    fn sums(&self, u: f64) -> (f64, f64, f64) {
        let h = self.h;
        let reach = WINDOW * h;
        let start = self.sorted.partition_point(|&x| x < u - reach);
        let end = self.sorted.partition_point(|&x| x <= u + reach);
        let inv_h = 1.0 / h;
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &x in &self.sorted[start..end] {
            let z = (u - x) * inv_h;
            let k = (-0.5 * z * z).exp();
            s0 += k;
            s1 += z * k;
            s2 += (z * z - 1.0) * k;
        }
        let norm = INV_SQRT_2PI / (self.sorted.len() as f64 * h);
        (norm * s0, -norm * inv_h * s1, norm * inv_h * inv_h * s2)
    }

    fn build_table(&self) -> Option<Table> {
        let n = self.sorted.len();
        let lo = self.sorted[0] - WINDOW * self.h;
        let hi = self.sorted[n - 1] + WINDOW * self.h;
        let nodes = ((hi - lo) * NODES_PER_BANDWIDTH / self.h).ceil() as usize + 1;
        if nodes > MAX_NODES {
            return None;
        }
        let step = (hi - lo) / (nodes - 1) as f64;
        let mut f = Vec::with_capacity(nodes);
        let mut d1 = Vec::with_capacity(nodes);
        let mut d2 = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let (a, b, c) = self.sums(lo + step * i as f64);
            f.push(a);
            d1.push(b);
            d2.push(c);
        }
        Some(Table { lo, hi, step, f, d1, d2 })
    }

    /// Unfloored `(f(u), f'(u))`.
    fn eval(&self, u: f64) -> (f64, f64) {
        match &self.table {
            Some(t) if u >= t.lo && u <= t.hi => {
                let pos = (u - t.lo) / t.step;
                let i = (pos.floor() as usize).min(t.f.len() - 2);
                let s = pos - i as f64;
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = (s3 - 2.0 * s2 + s) * t.step;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = (s3 - s2) * t.step;
                let f = h00 * t.f[i] + h10 * t.d1[i] + h01 * t.f[i + 1] + h11 * t.d1[i + 1];
                let d = h00 * t.d1[i] + h10 * t.d2[i] + h01 * t.d1[i + 1] + h11 * t.d2[i + 1];
                (f, d)
            }
            _ => {
                let (f, d, _) = self.sums(u);
                (f, d)
            }
        }
    }

    /// Density estimate after flooring, `max(f(u), floor)`.
    pub fn density(&self, u: f64) -> f64 {
        self.eval(u).0.max(self.floor)
    }

    /// Analytic derivative of the kernel estimate.
    pub fn density_derivative(&self, u: f64) -> f64 {
        self.eval(u).1
    }

    /// Floored and clipped score from the direct kernel sums, bypassing the
    /// interpolation table.
    pub fn score_exact(&self, u: f64) -> f64 {
        let (f, d, _) = self.sums(u);
        (d / f.max(self.floor)).clamp(-self.clip, self.clip)
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    /// Residual sample variance (denominator `n - 1`).
    pub fn v_hat(&self) -> f64 {
        self.v_hat
    }

    /// Mean squared clipped score at the residuals.
    pub fn i1_hat(&self) -> f64 {
        self.i1_hat
    }

    /// Mean squared score before clipping.
    pub fn i1_raw(&self) -> f64 {
        self.i1_raw
    }

    /// Sorted training residuals.
    pub fn residuals(&self) -> &[f64] {
        &self.sorted
    }

    /// `i1_hat * v_hat`; at least one for a true location family.
    pub fn information_ratio(&self) -> f64 {
        self.i1_hat * self.v_hat
    }

    pub fn diagnostics(&self) -> DensityDiagnostics {
        centered_score_checks(self)
    }
}

impl ErrorScore for ErrorDensityModel {
    fn score(&self, u: f64) -> f64 {
        let (f, d) = self.eval(u);
        (d / f.max(self.floor)).clamp(-self.clip, self.clip)
    }

    fn variance(&self) -> f64 {
        self.v_hat
    }
}

/// Monte Carlo checks of `E[score(e)] = 0` and `E[e score(e)] = -1` over the
/// residual sample, together with the stabilisation constants.
pub fn centered_score_checks(model: &ErrorDensityModel) -> DensityDiagnostics {
    let n = model.sorted.len() as f64;
    let (mut s, mut es) = (0.0, 0.0);
    for &e in &model.sorted {
        let l = model.score(e);
        s += l;
        es += e * l;
    }
    DensityDiagnostics {
        h: model.h,
        delta: model.floor,
        c: model.clip,
        v_hat: model.v_hat,
        i1_hat: model.i1_hat,
        mean_score: s / n,
        mean_eps_score: es / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, StudentT};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn rejects_short_and_degenerate_samples() {
        assert!(matches!(
            fit_density(&[0.1; 10]),
            Err(Error::InsufficientData { needed: 20, got: 10 })
        ));
        assert!(matches!(fit_density(&[0.5; 40]), Err(Error::DegenerateResiduals)));
        let mut r = normals(30, 1);
        r[3] = f64::INFINITY;
        assert!(fit_density(&r).is_err());
    }

    #[test]
    fn bandwidth_follows_silverman() {
        let r = normals(500, 2);
        let m = fit_density(&r).unwrap();
        let mut s = r.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        let sd = m.v_hat().sqrt();
        let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
        let expect = 1.06 * sd.min(iqr / 1.349) * 500f64.powf(-0.2);
        assert!((m.bandwidth() - expect).abs() < 1e-15);
    }

    #[test]
    fn standard_normal_information() {
        let m = fit_density(&normals(100_000, 3)).unwrap();
        assert!((m.i1_hat() - 1.0).abs() < 0.05, "i1 = {}", m.i1_hat());
        let d = centered_score_checks(&m);
        assert!(d.mean_score.abs() < 0.02, "{d:?}");
        assert!((d.mean_eps_score + 1.0).abs() < 0.05, "{d:?}");
    }

    #[test]
    fn scaled_t3_information() {
        // location information of t_3 is 4/6; scaling to unit variance multiplies by 3
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = StudentT::new(3.0).unwrap();
        let r: Vec<f64> = (0..100_000).map(|_| t.sample(&mut rng) / 3f64.sqrt()).collect();
        let m = fit_density(&r).unwrap();
        assert!((m.i1_hat() - 2.0).abs() < 0.07 * 2.0, "i1 = {}", m.i1_hat());
    }

    #[test]
    fn symmetric_sample_has_zero_score_at_centre() {
        let half = normals(200, 5);
        let r: Vec<f64> = half.iter().map(|x| -x).chain(half.iter().cloned()).collect();
        let m = fit_density(&r).unwrap();
        assert!(m.score(0.0).abs() < 1e-10, "{}", m.score(0.0));
        assert!(m.score_exact(0.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_score_in_bulk() {
        let m = fit_density(&normals(100_000, 6)).unwrap();
        // kernel smoothing inflates the variance by h^2; derivative noise dominates away from 0
        let grid: Vec<f64> = (0..=80).map(|i| -2.0 + i as f64 * 0.05).collect();
        let mae = grid
            .iter()
            .map(|&u| (m.score(u) + u / (m.v_hat() + m.bandwidth().powi(2))).abs())
            .sum::<f64>()
            / grid.len() as f64;
        assert!(mae < 0.12, "mean abs error {mae}");
        assert!((m.score(0.3) + 0.3).abs() < 0.05);
    }

    #[test]
    fn far_tail_is_bounded_and_redescends() {
        let r = normals(400, 7);
        let m = fit_density(&r).unwrap();
        let top = *m.residuals().last().unwrap();
        let bottom = m.residuals()[0];
        for &u in &[top + 10.0 * m.bandwidth(), bottom - 10.0 * m.bandwidth(), 1e6, -1e6] {
            let s = m.score(u);
            assert!(s.abs() <= m.clip());
            assert!(s.abs() < 1e-6, "u={u}: {s}");
        }
        // the floor engages before the score reaches the clip on this sample
        let just_out = top + 2.0 * m.bandwidth();
        assert!(m.score(just_out) < 0.0);
    }

    #[test]
    fn table_matches_direct_sums() {
        let m = fit_density(&normals(400, 8)).unwrap();
        let lo = m.residuals()[0] - 4.0 * m.bandwidth();
        let hi = m.residuals()[399] + 4.0 * m.bandwidth();
        for i in 0..=2000 {
            let u = lo + (hi - lo) * i as f64 / 2000.0;
            let (a, b) = (m.score(u), m.score_exact(u));
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "u={u}: {a} vs {b}");
        }
    }

    #[test]
    fn shift_moves_score_curve() {
        let r = normals(300, 9);
        let mu = 3.25;
        let shifted: Vec<f64> = r.iter().map(|x| x + mu).collect();
        let m0 = fit_density(&r).unwrap();
        let m1 = fit_density(&shifted).unwrap();
        for i in 0..200 {
            let u = -4.0 + 8.0 * i as f64 / 199.0;
            assert!((m0.score(u) - m1.score(u + mu)).abs() < 1e-9 * (1.0 + m0.score(u).abs()));
        }
    }

    #[test]
    fn gaussian_information_approaches_one() {
        let mut prev_gap = f64::INFINITY;
        for (n, tol) in [(1_000usize, 0.15), (10_000, 0.08), (100_000, 0.05)] {
            let m = fit_density(&normals(n, 10 + n as u64)).unwrap();
            let gap = (m.information_ratio() - 1.0).abs();
            assert!(gap < tol, "n={n}: i1*v = {}", m.information_ratio());
            assert!(gap < prev_gap + 0.02);
            prev_gap = gap;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn clip_is_respected(seed in 0u64..10_000, u in -50.0..50.0f64) {
            let m = fit_density(&normals(60, seed)).unwrap();
            prop_assert!(m.score(u).abs() <= m.clip());
            prop_assert!(m.density(u) >= m.floor());
        }

        #[test]
        fn translation_equivariance(seed in 0u64..10_000, mu in -20.0..20.0f64, u in -3.0..3.0f64) {
            let r = normals(80, seed);
            let s: Vec<f64> = r.iter().map(|x| x + mu).collect();
            let a = fit_density(&r).unwrap().score(u);
            let b = fit_density(&s).unwrap().score(u + mu);
            prop_assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()));
        }
    }
}
