//! Deterministic reference solvers and residual checks that do not share
//! code paths with the Monte Carlo solver.

use thiserror::Error;

use crate::measure::MeasureError;

mod duality;
mod dynkin;
mod fd;
mod radial;

pub use duality::{default_test_functions, duality_residual, BumpFunction, DualityResidual};
pub use dynkin::{dynkin_consistency, DynkinPoint};
pub use fd::{fd_solve, fd_solve_refined, FdOptions, FdReport};
pub use radial::{radial_solve, FluxJump, RadialOptions, RadialProfile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("problem is not radially symmetric: {0}")]
    NotRadial(String),
    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),
    #[error("linear solve stalled after {iterations} iterations (last update {update:e})")]
    LinearSolveFailure { iterations: usize, update: f64 },
    #[error("Picard loop did not converge in {iterations} iterations (last change {change:e})")]
    NonConvergence { iterations: usize, change: f64 },
    #[error("nonlinearity returned a non-finite value")]
    NonFinite,
    #[error("support of test function {0} leaves the domain")]
    SupportEscapes(usize),
    #[error("start {0:?} is not inside the sub-domain")]
    StartOutside(Vec<f64>),
    #[error("sub-domain is not contained in the domain")]
    NotSubdomain,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}
