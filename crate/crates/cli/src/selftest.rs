//! Fast subset of the property suite, runnable from the installed binary.

use stmle::design::MeanModelSpec;
use stmle::simlab::oracles::{bound_checks, gaussian_reduction_error, orthogonality_checks, treated_fraction, truth_check};
use stmle::simlab::{monte_carlo, simulate_dataset, Assignment, ErrorRegime, EstimatorKind, ScenarioSpec};
use stmle::tmle::{cross_fit_estimate, ScoreKind, TmleConfig};

use crate::report::{CheckLine, SelftestReport};
use crate::VERSION;

fn check(name: &str, passed: bool, detail: String) -> CheckLine {
    CheckLine {
        name: name.into(),
        passed,
        detail,
    }
}

fn failed(name: &str, e: impl std::fmt::Display) -> CheckLine {
    check(name, false, format!("error: {e}"))
}

pub fn run(seed: u64) -> SelftestReport {
    let mut checks = Vec::new();

    checks.push(match gaussian_reduction_error(5_000, seed) {
        Ok(err) => check("gaussian score reduces to least squares", err < 1e-12, format!("max rel error {err:.2e}")),
        Err(e) => failed("gaussian score reduces to least squares", e),
    });

    checks.push(match orthogonality_checks(ErrorRegime::SkewMixture, 1_000_000, seed) {
        Ok(cs) => {
            let worst = cs.iter().map(|c| c.z().abs()).fold(0.0, f64::max);
            check(
                "efficient score orthogonal to nuisance tangent directions",
                worst <= 3.5,
                format!("{} moments, max |z| {worst:.2}", cs.len()),
            )
        }
        Err(e) => failed("efficient score orthogonal to nuisance tangent directions", e),
    });

    checks.push(match bound_checks(ErrorRegime::Gaussian, 200_000, seed) {
        Ok(b) => check(
            "influence-function variance matches the efficiency bound",
            b.eif_variance.within(3.0) && b.cross_term.within(3.0) && b.bound_below_np(3.0),
            format!(
                "bound {:.4}, var(eif) z {:.2}, cross z {:.2}, np variance {:.4}",
                b.bound,
                b.eif_variance.z(),
                b.cross_term.z(),
                b.np_variance
            ),
        ),
        Err(e) => failed("influence-function variance matches the efficiency bound", e),
    });

    let bal = treated_fraction(Assignment::Balanced, 1_000_000, seed);
    let imb = treated_fraction(Assignment::Imbalanced, 1_000_000, seed.wrapping_add(1));
    checks.push(check(
        "average treated fractions",
        (bal - 0.522).abs() <= 0.002 && (imb - 0.391).abs() <= 0.002,
        format!("balanced {bal:.4}, imbalanced {imb:.4}"),
    ));

    let truths: Vec<_> = ErrorRegime::ALL
        .iter()
        .map(|&r| truth_check(r, 200_000, seed))
        .collect();
    checks.push(match truths.into_iter().collect::<Result<Vec<_>, _>>() {
        Ok(ts) => check(
            "true ATE is 0.75 in every regime",
            ts.iter().all(|t| t.within(3.0)),
            ts.iter().map(|t| format!("{:.4}", t.estimate)).collect::<Vec<_>>().join(", "),
        ),
        Err(e) => failed("true ATE is 0.75 in every regime", e),
    });

    let spec = MeanModelSpec::simulation();
    let data = simulate_dataset(500, ErrorRegime::SkewMixture, Assignment::Balanced, seed, 0);
    let gauss = TmleConfig {
        score: ScoreKind::GaussianAnalytic,
        ..TmleConfig::default()
    };
    checks.push(match cross_fit_estimate(&data, &spec, &gauss, seed) {
        Ok(r) => {
            let eps: Vec<f64> = r.per_fold.iter().map(|f| f.targeting.epsilon_hat).collect();
            check(
                "gaussian plug-in needs no targeting step",
                eps.iter().all(|e| *e == 0.0),
                format!("epsilon per fold {eps:?}"),
            )
        }
        Err(e) => failed("gaussian plug-in needs no targeting step", e),
    });
    checks.push(match cross_fit_estimate(&data, &spec, &TmleConfig::default(), seed) {
        Ok(r) => check(
            "kernel targeting equation solved",
            r.max_relative_residual() <= 1e-8,
            format!("max |G|/(1+|G(0)|) {:.2e}", r.max_relative_residual()),
        ),
        Err(e) => failed("kernel targeting equation solved", e),
    });

    let mut sc = ScenarioSpec::new(150, ErrorRegime::HeavyT3, Assignment::Imbalanced, 6, seed);
    sc.splits = 2;
    let kinds = [EstimatorKind::Tmle, EstimatorKind::Ols, EstimatorKind::Aipw];
    checks.push(match (monte_carlo(&sc, &kinds), monte_carlo(&sc, &kinds)) {
        (Ok(a), Ok(b)) => check(
            "monte carlo runs are reproducible",
            a == b && a.rows.len() == 3,
            format!("{} rows", a.rows.len()),
        ),
        (Err(e), _) | (_, Err(e)) => failed("monte carlo runs are reproducible", e),
    });

    SelftestReport {
        kind: "selftest".into(),
        version: VERSION.into(),
        checks,
    }
}
