use stmle::seeds;
use stmle::simlab::oracles::{mean_se, MomentCheck};
use stmle::simlab::*;

fn check(label: &str, x: &[f64], target: f64) {
    let (m, se) = mean_se(x);
    let c = MomentCheck { label: label.into(), estimate: m, se, target };
    assert!(c.within(3.0), "{c:?}");
}

#[test]
fn covariate_marginals() {
    let n = 1_000_000;
    let w = gen_covariates(n, &mut seeds::rng(21));
    let means = [0.0, 0.0, 0.5, 0.0];
    let vars = [1.0, 1.0, 0.25, 1.0 / 3.0];
    for j in 0..4 {
        let col: Vec<f64> = w.chunks_exact(4).map(|r| r[j]).collect();
        check(&format!("mean W{}", j + 1), &col, means[j]);
        let sq: Vec<f64> = col.iter().map(|v| (v - means[j]).powi(2)).collect();
        check(&format!("var W{}", j + 1), &sq, vars[j]);
    }
    assert_eq!(w, gen_covariates(n, &mut seeds::rng(21)));
}

#[test]
fn error_moments() {
    let n = 1_000_000;
    for regime in ErrorRegime::ALL {
        let e = gen_error(regime, n, &mut seeds::rng(22));
        check("mean", &e, 0.0);
        let sq: Vec<f64> = e.iter().map(|v| v * v).collect();
        if regime != ErrorRegime::HeavyT3 {
            check("variance", &sq, regime.error_variance());
        } else {
            // fourth moment is infinite, so the usual standard error is unreliable
            let (m, _) = mean_se(&sq);
            assert!((m - 1.0).abs() < 0.05, "{m}");
        }
    }
}

#[test]
fn mixture_information_exceeds_gaussian_bound() {
    let i = ErrorRegime::SkewMixture.location_information();
    assert!(i * ErrorRegime::SkewMixture.error_variance() > 1.5, "{i}");
}

#[test]
fn outcomes_follow_the_mean_model() {
    let d = simulate_dataset(200, ErrorRegime::MisspecifiedMean, Assignment::Balanced, 4, 0);
    let d2 = simulate_dataset(200, ErrorRegime::SkewMixture, Assignment::Balanced, 4, 0);
    for i in 0..200 {
        let diff = d.y(i) - d2.y(i);
        assert!((diff - 0.4 * d.w(i)[1].sin()).abs() < 1e-12);
    }
}
