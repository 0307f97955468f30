use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("invalid table `{name}`: {reason}")]
    InvalidTable { name: String, reason: String },
    #[error("enumeration budget exceeded: {what} needs {needed}, limit is {limit}")]
    BudgetExceeded {
        what: &'static str,
        needed: u128,
        limit: u128,
    },
    #[error("{0} surprisal is infinite (zero-probability entry with the positivity floor off)")]
    InfiniteSurprisal(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("observation sequence has zero probability under the model")]
    ImpossibleObservations,
    #[error("relative value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("transition row has no support")]
    NoSupport,
    #[error("every rollout carries zero weight")]
    DegenerateWeights,
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },
    #[error("specification mismatch: {0}")]
    SpecMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported file version {0}")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
