use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum MfgError {
    #[error("grid size {0} is too small, need at least 3 nodes")]
    GridTooSmall(usize),

    #[error("grid function has {got} values but the grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },

    #[error("grid functions live on different grids ({0} vs {1} nodes)")]
    GridMismatch(usize, usize),

    #[error("non-finite value at node {index}")]
    NonFiniteValue { index: usize },

    #[error("density must be positive everywhere, found {value} at node {index}")]
    NonPositiveDensity { index: usize, value: f64 },

    #[error("quadrature did not reach tolerance {tol} after {refinements} grid doublings")]
    QuadratureNoConvergence { tol: f64, refinements: u32 },

    #[error("step size fell below 1e-14 at t = {t}, the flow is too stiff for this integrator")]
    StepSizeUnderflow { t: f64 },

    #[error("right-hand side became non-finite at t = {t}, the flow diverged")]
    DivergentRhs { t: f64 },

    #[error("Newton iteration failed to converge at t = {t}")]
    NewtonFailure { t: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("state violates a solver invariant: {0}")]
    InvariantViolation(String),
}
