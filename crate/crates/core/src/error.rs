use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("a grid needs at least one node")]
    EmptyGrid,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("kernel is directed (not symmetric) but {0} requires an undirected kernel")]
    DirectedKernel(&'static str),

    #[error("kernel is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("eigensolver failed to converge")]
    EigenSolverFailure,

    #[error("payoff structure violates the numerical-range condition (sup = {sup})")]
    NumericalRangeViolated { sup: f64 },

    #[error("1 is an eigenvalue of the payoff operator; the mean equation is singular")]
    SingularMeanEquation,

    #[error("signal covariance of node {node} cannot be pseudo-inverted")]
    SingularSignalCov { node: usize },

    #[error("the linear equilibrium system is singular")]
    SingularEquilibriumSystem,

    #[error("fixed-point iteration did not converge after {iterations} iterations (last step {last_step:e})")]
    NoConvergence { iterations: usize, last_step: f64 },

    #[error("infeasible equilibrium moment: {0}")]
    InfeasibleMoment(String),

    #[error("payoff operator has no real eigenvalue at least 1 (largest real eigenvalue {largest:?})")]
    NoRealEigenvalueAtLeastOne { largest: Option<f64> },

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
