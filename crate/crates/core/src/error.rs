use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {point:?} is outside the attractor tube")]
    OutsideTube { point: Vec<f64> },

    #[error("point is outside the chart domain: {0}")]
    ChartDomain(String),

    #[error("eigen-gap failure: {0}")]
    EigenGap(String),

    #[error("normal Hessian block is singular (smallest |eigenvalue| = {0:e})")]
    Singular(f64),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("iteration diverged at step {step}")]
    Diverged { step: u64 },

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("projection did not converge for {point:?}")]
    ProjectionFailed { point: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, Error>;
