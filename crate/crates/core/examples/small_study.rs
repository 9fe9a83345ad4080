//! A short Monte Carlo study in the balanced design.
//!
//! `cargo run --release --example small_study -- 20`

use std::time::Instant;

use stmle::simlab::{monte_carlo, Assignment, ErrorRegime, EstimatorKind, ScenarioSpec};

fn main() {
    let reps: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("reps must be an integer"))
        .unwrap_or(10);
    let kinds = [EstimatorKind::Tmle, EstimatorKind::Ols, EstimatorKind::Aipw];
    for regime in ErrorRegime::ALL {
        let spec = ScenarioSpec::new(500, regime, Assignment::Balanced, reps, 2024);
        let start = Instant::now();
        let table = monte_carlo(&spec, &kinds).expect("study failed");
        println!("{} ({:.1}s)", spec.label(), start.elapsed().as_secs_f64());
        for r in table.rows {
            println!(
                "  {:<5} bias {:+.3}  rmse {:.3}  coverage {:.3}  width {:.3}",
                r.estimator.name(),
                r.bias,
                r.rmse,
                r.coverage,
                r.width
            );
        }
    }
}
