use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("evaluator `{evaluator}` returned a non-finite value at t={t}, x={x}")]
    EvaluatorFailure { evaluator: &'static str, t: f64, x: f64 },

    #[error("explicit scheme needs dt <= dx^2/Lambda = {limit:e}, got dt = {dt:e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("penalized fixed point did not converge at time index {t_index} after {iterations} iterations (last change {last_change:e})")]
    InnerDivergence { t_index: usize, iterations: usize, last_change: f64 },

    #[error("projected SOR stalled at time index {t_index}: residual {residual:e} after {sweeps} sweeps")]
    LcpStall { t_index: usize, sweeps: usize, residual: f64 },

    #[error("penalized solution decreased between levels n={from} and n={to} at node (t_index={t_index}, x_index={x_index}) by {drop:e}")]
    MonotonicityViolation { from: f64, to: f64, t_index: usize, x_index: usize, drop: f64 },

    #[error("Picard map failed to contract: ratios {ratios:?}")]
    NoContraction { ratios: Vec<f64> },

    #[error("coefficient derivative a_x is required for path simulation")]
    MissingDerivative,

    #[error("regression Gram matrix is singular at step {step} (basis degree {degree}, {paths} paths)")]
    RegressionSingular { step: usize, degree: usize, paths: usize },

    #[error("scenario error: {0}")]
    Scenario(String),
}

impl Error {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidProblem(_) => "invalid-problem",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::EvaluatorFailure { .. } => "evaluator-failure",
            Error::CflViolation { .. } => "cfl-violation",
            Error::GridTooCoarse(_) => "grid-too-coarse",
            Error::InnerDivergence { .. } => "inner-divergence",
            Error::LcpStall { .. } => "lcp-stall",
            Error::MonotonicityViolation { .. } => "monotonicity-violation",
            Error::NoContraction { .. } => "no-contraction",
            Error::MissingDerivative => "missing-derivative",
            Error::RegressionSingular { .. } => "regression-singular",
            Error::Scenario(_) => "scenario",
        }
    }

    /// Whether the failure is a problem-definition issue rather than a numerical one.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidProblem(_)
                | Error::InvalidArgument(_)
                | Error::EvaluatorFailure { .. }
                | Error::MissingDerivative
                | Error::Scenario(_)
        )
    }
}
