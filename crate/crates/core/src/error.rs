use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("covariance matrix is not positive definite (jitter escalated to {jitter:e})")]
    CholeskyFailure { jitter: f64 },

    #[error("hyperparameter optimisation failed: {0}")]
    OptimizationFailure(String),

    #[error("insufficient data: need at least {required} observations, got {got}")]
    InsufficientData { required: usize, got: usize },

    #[error("integration step too large: state went negative ({state} = {value:e} at t = {time})")]
    StepTooLarge {
        state: &'static str,
        value: f64,
        time: f64,
    },

    #[error("degenerate chains: {0}")]
    DegenerateChains(String),

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}
