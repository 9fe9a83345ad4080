use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::benchmarks::sigmoid;
use crate::design::{Dataset, MeanModelSpec};
use crate::seeds::{self, Purpose};

/// Coefficients of the simulation mean on the basis
/// `(1, A, W1, W2, W3, W4, A W1, A W3)`.
pub const BETA0: [f64; 8] = [0.0, 1.0, 0.8, -0.6, 0.5, 0.4, 0.7, -0.5];

/// Population ATE: `1 + 0.7 E[W1] - 0.5 E[W3]`.
pub const TRUE_ATE: f64 = 0.75;

pub const COVARIATES: [&str; 4] = ["W1", "W2", "W3", "W4"];

const BALANCED_GAMMA: [f64; 5] = [-0.2, 0.5, -0.4, 0.6, -0.3];
const IMBALANCED_GAMMA: [f64; 5] = [-1.0, 0.9, -0.8, 0.8, -0.6];
const IMBALANCED_BOUNDS: (f64, f64) = (0.08, 0.92);

// two-component skewed mixture: weight, mean, sd
const MIX: [(f64, f64, f64); 2] = [(0.8, -0.5, 0.5), (0.2, 2.0, 1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorRegime {
    Gaussian,
    HeavyT3,
    SkewMixture,
    MisspecifiedMean,
}

impl ErrorRegime {
    pub const ALL: [ErrorRegime; 4] = [
        ErrorRegime::Gaussian,
        ErrorRegime::HeavyT3,
        ErrorRegime::SkewMixture,
        ErrorRegime::MisspecifiedMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorRegime::Gaussian => "gaussian",
            ErrorRegime::HeavyT3 => "heavy_t3",
            ErrorRegime::SkewMixture => "skew_mixture",
            ErrorRegime::MisspecifiedMean => "misspecified_mean",
        }
    }

    pub fn parse(s: &str) -> Option<ErrorRegime> {
        ErrorRegime::ALL.into_iter().find(|r| r.name() == s)
    }

    /// Law of the additive error (the misspecified regime reuses the mixture).
    fn law(self) -> ErrorRegime {
        match self {
            ErrorRegime::MisspecifiedMean => ErrorRegime::SkewMixture,
            r => r,
        }
    }

    pub fn mean_shift(self) -> f64 {
        match self.law() {
            ErrorRegime::SkewMixture => MIX.iter().map(|(p, m, _)| p * m).sum(),
            _ => 0.0,
        }
    }

    pub fn error_variance(self) -> f64 {
        match self.law() {
            ErrorRegime::SkewMixture => {
                let mu = self.mean_shift();
                MIX.iter().map(|(p, m, s)| p * (s * s + m * m)).sum::<f64>() - mu * mu
            }
            _ => 1.0,
        }
    }

    /// Density of the centred error.
    pub fn density(self, u: f64) -> f64 {
        match self.law() {
            ErrorRegime::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
            ErrorRegime::HeavyT3 => 2.0 / (PI * (1.0 + u * u).powi(2)),
            _ => {
                let x = u + self.mean_shift();
                MIX.iter().map(|&(p, m, s)| p * normal_pdf((x - m) / s) / s).sum()
            }
        }
    }

    /// True location score `f'(u) / f(u)`.
    pub fn score(self, u: f64) -> f64 {
        match self.law() {
            ErrorRegime::Gaussian => -u,
            ErrorRegime::HeavyT3 => -4.0 * u / (1.0 + u * u),
            _ => {
                let x = u + self.mean_shift();
                let (mut f, mut df) = (0.0, 0.0);
                for &(p, m, s) in &MIX {
                    let z = (x - m) / s;
                    let d = p * normal_pdf(z) / s;
                    f += d;
                    df += -d * z / s;
                }
                df / f
            }
        }
    }

    /// Fisher information for location, `E[score^2]`; closed form where one
    /// exists, otherwise trapezoidal quadrature on a wide grid.
    pub fn location_information(self) -> f64 {
        match self.law() {
            ErrorRegime::Gaussian => 1.0,
            ErrorRegime::HeavyT3 => 2.0,
            r => {
                let (lo, hi, m) = (-12.0, 14.0, 52_000);
                let step = (hi - lo) / m as f64;
                (0..=m)
                    .map(|i| {
                        let u = lo + i as f64 * step;
                        let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                        w * r.score(u).powi(2) * r.density(u)
                    })
                    .sum::<f64>()
                    * step
            }
        }
    }

    /// Additive mean perturbation absent from every working model.
    pub fn perturbation(self, w: &[f64]) -> f64 {
        match self {
            ErrorRegime::MisspecifiedMean => 0.4 * w[1].sin(),
            _ => 0.0,
        }
    }
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Balanced,
    Imbalanced,
}

impl Assignment {
    pub fn name(self) -> &'static str {
        match self {
            Assignment::Balanced => "balanced",
            Assignment::Imbalanced => "imbalanced",
        }
    }

    pub fn parse(s: &str) -> Option<Assignment> {
        [Assignment::Balanced, Assignment::Imbalanced].into_iter().find(|a| a.name() == s)
    }

    /// `P(A = 1 | W = w)`.
    pub fn propensity(self, w: &[f64]) -> f64 {
        let g = match self {
            Assignment::Balanced => &BALANCED_GAMMA,
            Assignment::Imbalanced => &IMBALANCED_GAMMA,
        };
        let p = sigmoid(g[0] + g[1..].iter().zip(w).map(|(c, x)| c * x).sum::<f64>());
        match self {
            Assignment::Balanced => p,
            Assignment::Imbalanced => p.clamp(IMBALANCED_BOUNDS.0, IMBALANCED_BOUNDS.1),
        }
    }
}

/// `n x 4` covariates, row-major: `W1, W2 ~ N(0,1)`, `W3 ~ Bern(1/2)`,
/// `W4 ~ U(-1,1)`.
pub fn gen_covariates(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w = Vec::with_capacity(4 * n);
    for _ in 0..n {
        w.push(StandardNormal.sample(rng));
        w.push(StandardNormal.sample(rng));
        w.push((rng.random::<f64>() < 0.5) as u8 as f64);
        w.push(rng.random_range(-1.0..1.0));
    }
    w
}

pub fn gen_treatment(w: &[f64], assignment: Assignment, rng: &mut ChaCha8Rng) -> Vec<u8> {
    w.chunks_exact(4)
        .map(|row| (rng.random::<f64>() < assignment.propensity(row)) as u8)
        .collect()
}

pub fn gen_error(regime: ErrorRegime, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match regime.law() {
        ErrorRegime::Gaussian => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        ErrorRegime::HeavyT3 => {
            let t = StudentT::new(3.0).expect("valid degrees of freedom");
            let scale = 3f64.sqrt().recip();
            (0..n).map(|_| t.sample(rng) * scale).collect()
        }
        _ => {
            let shift = regime.mean_shift();
            (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let z: f64 = StandardNormal.sample(rng);
                    let (_, m, s) = if u < MIX[0].0 { MIX[0] } else { MIX[1] };
                    m + s * z - shift
                })
                .collect()
        }
    }
}

/// `Y = m(A, W; beta0) + perturbation(W) + eps`.
pub fn gen_outcome(w: &[f64], a: &[u8], regime: ErrorRegime, eps: &[f64]) -> Vec<f64> {
    let spec = MeanModelSpec::simulation();
    w.chunks_exact(4)
        .zip(a)
        .zip(eps)
        .map(|((row, &ai), e)| spec.mean_unchecked(&BETA0, ai, row) + regime.perturbation(row) + e)
        .collect()
}

/// Replication `rep` of a scenario: covariate, treatment and error streams
/// are derived independently from `(master, rep)`.
pub fn simulate_dataset(n: usize, regime: ErrorRegime, assignment: Assignment, master: u64, rep: u64) -> Dataset {
    let w = gen_covariates(n, &mut seeds::rng(seeds::derive(master, rep, Purpose::Covariates)));
    let a = gen_treatment(&w, assignment, &mut seeds::rng(seeds::derive(master, rep, Purpose::Treatment)));
    let e = gen_error(regime, n, &mut seeds::rng(seeds::derive(master, rep, Purpose::Error)));
    let y = gen_outcome(&w, &a, regime, &e);
    Dataset::new(COVARIATES.iter().map(|s| s.to_string()).collect(), w, a, y).expect("simulated data are well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_moments() {
        assert_eq!(ErrorRegime::SkewMixture.mean_shift(), 0.0);
        assert!((ErrorRegime::SkewMixture.error_variance() - 1.4).abs() < 1e-14);
        assert_eq!(ErrorRegime::HeavyT3.error_variance(), 1.0);
        for r in ErrorRegime::ALL {
            assert_eq!(ErrorRegime::parse(r.name()), Some(r));
        }
    }

    #[test]
    fn scores_match_log_density_derivative() {
        for r in ErrorRegime::ALL {
            for u in [-3.0, -0.7, 0.0, 0.4, 2.5] {
                let h = 1e-5;
                let num = ((r.density(u + h)).ln() - (r.density(u - h)).ln()) / (2.0 * h);
                assert!((num - r.score(u)).abs() < 1e-6, "{r:?} {u}");
            }
        }
    }

    #[test]
    fn information_by_quadrature() {
        assert!((ErrorRegime::HeavyT3.location_information() - 2.0).abs() < 1e-12);
        let i = ErrorRegime::SkewMixture.location_information();
        // at least the Gaussian bound 1/variance
        assert!(i > 1.0 / 1.4 && i < 10.0, "{i}");
    }

    #[test]
    fn noiseless_outcome_at_origin() {
        let w = vec![0.0; 4];
        assert_eq!(gen_outcome(&w, &[1], ErrorRegime::Gaussian, &[0.0]), vec![1.0]);
        assert_eq!(gen_outcome(&w, &[0], ErrorRegime::MisspecifiedMean, &[0.0]), vec![0.0]);
    }

    #[test]
    fn streams_are_reproducible() {
        let a = simulate_dataset(50, ErrorRegime::HeavyT3, Assignment::Imbalanced, 3, 7);
        let b = simulate_dataset(50, ErrorRegime::HeavyT3, Assignment::Imbalanced, 3, 7);
        assert_eq!(a.outcomes(), b.outcomes());
        assert_ne!(a.outcomes(), simulate_dataset(50, ErrorRegime::HeavyT3, Assignment::Imbalanced, 3, 8).outcomes());
    }

    #[test]
    fn imbalanced_propensity_is_truncated() {
        let mut rng = seeds::rng(1);
        let w = gen_covariates(5000, &mut rng);
        for row in w.chunks_exact(4) {
            let p = Assignment::Imbalanced.propensity(row);
            assert!((0.08..=0.92).contains(&p));
        }
    }
}
