use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid model specification: {0}")]
    Spec(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular design matrix; near-collinear columns: {}", .columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error(
        "singular information matrix (smallest/largest eigenvalue {ratio:.3e}); near-null direction {direction:?}"
    )]
    SingularInformation { ratio: f64, direction: Vec<f64> },

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate residuals: sample variance is zero")]
    DegenerateResiduals,

    #[error("targeting equation not solved after {iterations} iterations (last |G| = {last:.3e})")]
    TargetingNonConvergence {
        iterations: usize,
        last: f64,
        /// `(epsilon, G(epsilon))` pairs in evaluation order.
        trajectory: Vec<(f64, f64)>,
    },

    #[error("logistic regression did not converge: {0}")]
    LogisticNonConvergence(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{estimator}: {failures} of {reps} replications failed (budget 1%)")]
    FailureBudget {
        estimator: String,
        failures: usize,
        reps: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Error {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }
}
