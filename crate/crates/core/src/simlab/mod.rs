//! Simulation designs with four error regimes and two assignment mechanisms,
//! a seeded Monte Carlo driver and metric aggregation.

pub mod dgp;
pub mod metrics;
pub mod montecarlo;
pub mod oracles;

pub use dgp::{
    gen_covariates, gen_error, gen_outcome, gen_treatment, simulate_dataset, Assignment, ErrorRegime, BETA0,
    COVARIATES, TRUE_ATE,
};
pub use metrics::{summarize, Draw, Summary};
pub use montecarlo::{monte_carlo, run_replications, tabulate, EstimatorOutcome, EstimatorKind, MetricsRow, MetricsTable, ReplicationRecord, ScenarioSpec};
