use serde::{Deserialize, Serialize};

/// One replication's output for one estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Draw {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.lo <= truth && truth <= self.hi
    }
}

/// Monte Carlo summary of an estimator against a known truth, with the
/// Monte Carlo standard error of each metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub reps: usize,
    pub bias: f64,
    pub esd: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub width: f64,
    pub bias_se: f64,
    pub esd_se: f64,
    pub rmse_se: f64,
    pub coverage_se: f64,
    pub width_se: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Aggregates draws; `None` when there are none.
pub fn summarize(draws: &[Draw], truth: f64) -> Option<Summary> {
    if draws.is_empty() {
        return None;
    }
    let r = draws.len() as f64;
    let est: Vec<f64> = draws.iter().map(|d| d.estimate).collect();
    let sq: Vec<f64> = est.iter().map(|e| (e - truth).powi(2)).collect();
    let widths: Vec<f64> = draws.iter().map(Draw::width).collect();
    let bias = mean(&est) - truth;
    let esd = sample_sd(&est);
    let mse = mean(&sq);
    let rmse = mse.sqrt();
    let coverage = draws.iter().filter(|d| d.covers(truth)).count() as f64 / r;
    Some(Summary {
        reps: draws.len(),
        bias,
        esd,
        rmse,
        coverage,
        width: mean(&widths),
        bias_se: esd / r.sqrt(),
        esd_se: if draws.len() > 1 { esd / (2.0 * (r - 1.0)).sqrt() } else { 0.0 },
        rmse_se: if rmse > 0.0 { sample_sd(&sq) / r.sqrt() / (2.0 * rmse) } else { 0.0 },
        coverage_se: (coverage * (1.0 - coverage) / r).sqrt(),
        width_se: sample_sd(&widths) / r.sqrt(),
    })
}
