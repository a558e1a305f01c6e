use thiserror::Error;

/// Errors raised anywhere in the fitting and benchmark-dose pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BmdError {
    #[error("degenerate knots: {0}")]
    DegenerateKnots(String),

    #[error("x = {x} lies outside the knot range [{lo}, {hi}]")]
    OutOfSupport { x: f64, lo: f64, hi: f64 },

    #[error("an order-1 spline has no continuous derivative")]
    NoDerivative,

    #[error("penalty matrices are only available for cubic splines (got order {0})")]
    UnsupportedOrder(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: n = {n} must exceed the {params} regression parameters")]
    InsufficientData { n: usize, params: usize },

    #[error("inner Newton optimisation failed after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    InnerOptFailed { iterations: usize, grad_norm: f64 },

    #[error("smoothing-parameter optimisation failed: {0}")]
    FitFailed(String),

    #[error(
        "benchmark dose not estimable: U_n(xmax) = {margin:.6} <= 0; decrease p_plus so that a root exists in (x0, xmax)"
    )]
    BmdNotEstimable { margin: f64 },

    #[error("|U_n'(x_b)| = {0:.3e} is too small for a Delta-method limit")]
    DegenerateSlope(f64),

    #[error("posterior draws of the exposure weights overflow; their sample covariance is not finite")]
    NonFiniteCovariance,

    #[error("no bootstrap sample produced an estimable benchmark dose ({failures} failures)")]
    BmdlNotEstimable { failures: usize },

    #[error("no finite true benchmark dose: sigma * c = {0} >= 1")]
    NoTrueBmd(f64),
}

pub type Result<T> = std::result::Result<T, BmdError>;
