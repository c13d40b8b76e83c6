//! Solvers for stationary mean-field games on the periodic unit torus.
//!
//! The crate discretizes the coupled Hamilton-Jacobi/transport system with a
//! monotone upwind scheme and offers two ways to reach its stationary states:
//! a gradient flow on a convex energy in the value function alone, and a
//! mass-preserving contracting flow on the full density/value pair. Closed
//! form Gibbs solutions act as references, and a diagnostics layer turns the
//! structural properties of the scheme (adjoint consistency, monotonicity,
//! contraction, energy decay, grid convergence) into runnable checks.

pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod flows;
pub mod grid;
pub mod hamiltonian;
pub mod operators;

pub use diagnostics::{
    run_adjoint_negative_control, run_adjoint_suite, run_contraction_test, run_energy_audit,
    run_monotonicity_suite, run_refinement_study_gradient_drift, run_refinement_study_zero_drift,
    ContractionReport, EnergyAudit, StudyResult, SuiteReport,
};
pub use error::MfgError;
pub use exact::{
    error_report, error_report_2d, error_report_parts, error_report_parts_2d, exact_2d_from_w,
    exact_2d_separable, exact_congestion, exact_gradient_drift, exact_zero_drift, quadrature,
    quadrature_2d, ErrorReport, ExactFamily, ExactSolution, ExactSolution2D,
};
pub use flows::{
    gradient_rhs, integrate, monotonic_rhs, monotonic_rhs_2d, solve_gradient_flow,
    solve_gradient_flow_with, solve_monotonic_flow, solve_monotonic_flow_2d,
    solve_monotonic_flow_2d_with, solve_monotonic_flow_with, FlowConfig, IntegratorKind,
    IntegratorStats, Sample, StopReason, Trajectory,
};
pub use grid::{
    mass, mass2, mean_zero_project, mean_zero_project2, norms, norms2, stencil, stencil2_x,
    stencil2_y, GridFunction1D, GridFunction2D, PeriodicGrid1D, PeriodicGrid2D, StencilPair,
};
pub use hamiltonian::{
    adjoint2_apply, adjoint_apply, congestion_terms, fd_and_grad, fq, fq_grad, g2_apply, g_apply,
    linearize_apply, GradPair, ProblemData1D, ProblemData2D, Variant,
};
pub use operators::{
    a_apply, a_apply_2d, energy_phi, energy_phi_2d, hbar_from_u, hbar_rate, hbar_rate_2d,
    monotonicity_gap, monotonicity_gap_with_scale, phi_gradient, residual, residual_2d,
    variational_inequality, MfgState, MfgState2D, Residual,
};
