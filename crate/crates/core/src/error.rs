use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate denominator {name} = {value:e} (guard {guard:e})")]
    DegenerateDenominator {
        name: &'static str,
        value: f64,
        guard: f64,
    },

    /// The lognormal law collapsed to a point mass (`t * sigma2^2 == 0`).
    #[error("degenerate lognormal distribution: t * sigma2^2 = 0")]
    DegenerateDistribution,

    #[error("invalid reaction law: {0}")]
    InvalidLaw(String),

    #[error("band ordering violated: need 0 < a < alpha < b, got a={a}, alpha={alpha}, b={b}")]
    DomainViolation { a: f64, alpha: f64, b: f64 },

    #[error("no convergence after {iterations} iterations (residual norm {residual_norm:e}): {reason}")]
    NoConvergence {
        iterations: usize,
        residual_norm: f64,
        reason: String,
        /// Residual norm after each accepted Newton step.
        trace: Vec<f64>,
    },

    #[error("band ordering collapsed: alpha - a = {lower_gap:e}, b - alpha = {upper_gap:e}")]
    OrderingCollapse { lower_gap: f64, upper_gap: f64 },

    #[error("config error: {0}")]
    Config(String),
}
