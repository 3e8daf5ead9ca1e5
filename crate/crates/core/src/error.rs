use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// The noise family has atoms; it has no density and the dynamic theory does not apply.
    #[error("noise family `{0}` is not differentiable (static use only)")]
    NotDifferentiable(&'static str),

    #[error("probability of a buy at ask {ask} is zero under the current belief")]
    ZeroBuyProbability { ask: f64 },

    #[error("probability of a sell at bid {bid} is zero under the current belief")]
    ZeroSellProbability { bid: f64 },

    #[error("fixed-point iteration did not converge after {iterations} steps (last step {last_step:e})")]
    NoConvergence { iterations: usize, last_step: f64 },

    #[error("existence/uniqueness condition fails: K = {k} (need K < 1 and 0 < Phi(0) < 1)")]
    ConditionFailed { k: f64 },

    #[error("invalid state grid: {0}")]
    InvalidGrid(String),

    #[error("invalid belief: {0}")]
    InvalidBelief(String),

    #[error("invalid generator matrix: {0}")]
    InvalidGenerator(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}
