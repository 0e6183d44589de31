//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension d = {0}: the library requires d >= 3")]
    UnsupportedDimension(usize),

    #[error("label bound violated: sup|f*| + noise half-width = {0} > 1")]
    LabelBound(f64),

    #[error("invalid width m = {0}: must be even and >= 2")]
    InvalidWidth(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel argument {0} outside [-1, 1]")]
    KernelDomain(f64),

    #[error("polynomial argument {0} outside [-1, 1]")]
    PolynomialDomain(f64),

    #[error("eigenvalue series failed at r = {0}")]
    SeriesFailure(usize),

    #[error("quadrature did not reach tolerance {tol} (h = {h}, d = {d})")]
    QuadratureFailure { h: usize, d: usize, tol: f64 },

    #[error("multiplicity N({d}, {h}) overflows 128-bit integer arithmetic")]
    MultiplicityOverflow { d: usize, h: usize },

    #[error("oracle scale exceeded: {0}")]
    OracleScale(String),

    #[error("matrix of order {n} exceeds the dense eigensolver cap {cap}")]
    EigenCap { n: usize, cap: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("plan infeasible: projection residual {tail:.3e} exceeds eps/4 = {budget:.3e}")]
    PlanInfeasible { tail: f64, budget: f64 },

    #[error("gradient flow diverged at step {step}")]
    Divergence { step: usize },

    #[error("lambda_epsilon = {0} outside (0, 1/(4d)]")]
    InvalidEigenvalue(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
