//! Closed-form stationary solutions for benchmarking, plus the periodic
//! quadrature used to normalize them.
//!
//! Whenever the drift is the gradient of a potential psi, the continuous
//! system is solved by u = -psi (shifted to mean zero) and the Gibbs density
//! m = exp(V - psi'^2 / 2) / Z, with effective Hamiltonian ln Z. Zero drift,
//! the congestion variant, and the two-dimensional problem with w = 0 are
//! special cases of the same computation. These solutions are sampled at the
//! grid nodes and serve as references in convergence studies.

use crate::error::MfgError;
use crate::grid::{
    mean_zero_project, norms, norms2, GridFunction1D, GridFunction2D, PeriodicGrid1D,
    PeriodicGrid2D,
};
use crate::operators::{MfgState, MfgState2D};

/// Hard cap on grid doublings inside the adaptive quadrature. Second-order
/// integrands (kinks) converge to 1e-12 well inside it; integrands with jumps
/// exhaust it and report failure instead.
const MAX_REFINEMENTS: u32 = 24;

/// Compensated mean of f over j/n, j = 0..n-1. For periodic integrands this
/// rectangle sum is the trapezoid rule, spectrally accurate for smooth f.
fn periodic_mean(f: &impl Fn(f64) -> f64, n: u64) -> f64 {
    let inv_n = 1.0 / n as f64;
    let mut sum = 0.0;
    let mut carry = 0.0;
    for j in 0..n {
        let term = f(j as f64 * inv_n);
        let y = term - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum * inv_n
}

/// Integral of f over one period of the unit torus: trapezoid sums refined by
/// grid doubling until two consecutive levels agree to tol * (1 + |value|).
pub fn quadrature(f: impl Fn(f64) -> f64, tol: f64) -> Result<f64, MfgError> {
    let mut n: u64 = 8;
    let mut prev = periodic_mean(&f, n);
    for _ in 0..MAX_REFINEMENTS {
        n *= 2;
        let next = periodic_mean(&f, n);
        if (next - prev).abs() <= tol * (1.0 + next.abs()) {
            return Ok(next);
        }
        prev = next;
    }
    Err(MfgError::QuadratureNoConvergence { tol, refinements: MAX_REFINEMENTS })
}

/// Two-dimensional analogue of [`quadrature`] on the unit torus, with a
/// tighter doubling cap since each level costs n^2 evaluations.
pub fn quadrature_2d(f: impl Fn(f64, f64) -> f64, tol: f64) -> Result<f64, MfgError> {
    const MAX_REFINEMENTS_2D: u32 = 8;
    let mean2 = |n: u64| -> f64 {
        let inv_n = 1.0 / n as f64;
        let mut sum = 0.0;
        let mut carry = 0.0;
        for j in 0..n {
            let y = j as f64 * inv_n;
            for i in 0..n {
                let term = f(i as f64 * inv_n, y);
                let e = term - carry;
                let t = sum + e;
                carry = (t - sum) - e;
                sum = t;
            }
        }
        sum * inv_n * inv_n
    };
    let mut n: u64 = 8;
    let mut prev = mean2(n);
    for _ in 0..MAX_REFINEMENTS_2D {
        n *= 2;
        let next = mean2(n);
        if (next - prev).abs() <= tol * (1.0 + next.abs()) {
            return Ok(next);
        }
        prev = next;
    }
    Err(MfgError::QuadratureNoConvergence { tol, refinements: MAX_REFINEMENTS_2D })
}

const QUAD_TOL: f64 = 1e-12;

/// Which closed-form family a reference solution comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum ExactFamily {
    ZeroMeanDrift,
    GradientDrift,
    Congestion,
    Separable2D,
    General2D,
}

/// A continuum stationary solution sampled at the grid nodes.
#[derive(Clone, Debug)]
pub struct ExactSolution {
    pub u: GridFunction1D,
    pub m: GridFunction1D,
    pub hbar: f64,
    pub family: ExactFamily,
}

/// 2-D counterpart of [`ExactSolution`].
#[derive(Clone, Debug)]
pub struct ExactSolution2D {
    pub w: GridFunction2D,
    pub theta: GridFunction2D,
    pub hbar: f64,
    pub family: ExactFamily,
}

/// Zero drift: u = 0 and the Gibbs density exp(V) / Z, hbar = ln Z.
pub fn exact_zero_drift(n: usize, v: impl Fn(f64) -> f64) -> Result<ExactSolution, MfgError> {
    let grid = PeriodicGrid1D::new(n)?;
    let z = quadrature(|x| v(x).exp(), QUAD_TOL)?;
    let m = GridFunction1D::from_fn(grid, |x| v(x).exp() / z)?;
    Ok(ExactSolution {
        u: GridFunction1D::zeros(grid),
        m,
        hbar: z.ln(),
        family: ExactFamily::ZeroMeanDrift,
    })
}

/// Gradient drift b = psi': u = -psi shifted to nodal mean zero, and the
/// tilted Gibbs density exp(V - psi'^2 / 2) / Z, hbar = ln Z. Callers supply
/// psi and its derivative explicitly so the density is sampled without any
/// differencing error.
pub fn exact_gradient_drift(
    n: usize,
    v: impl Fn(f64) -> f64,
    psi: impl Fn(f64) -> f64,
    psi_prime: impl Fn(f64) -> f64,
) -> Result<ExactSolution, MfgError> {
    let grid = PeriodicGrid1D::new(n)?;
    let density = |x: f64| (v(x) - 0.5 * psi_prime(x) * psi_prime(x)).exp();
    // density is sampled again below, so the quadrature can only borrow it.
    #[allow(clippy::needless_borrows_for_generic_args)]
    let z = quadrature(&density, QUAD_TOL)?;
    let u = mean_zero_project(&GridFunction1D::from_fn(grid, |x| -psi(x))?);
    let m = GridFunction1D::from_fn(grid, |x| density(x) / z)?;
    Ok(ExactSolution { u, m, hbar: z.ln(), family: ExactFamily::GradientDrift })
}

/// Congestion variant with zero drift: the density-scaled kinetic term
/// vanishes at u = 0, so the solution coincides with the zero-drift one.
pub fn exact_congestion(n: usize, v: impl Fn(f64) -> f64) -> Result<ExactSolution, MfgError> {
    let mut sol = exact_zero_drift(n, v)?;
    sol.family = ExactFamily::Congestion;
    Ok(sol)
}

/// Separable 2-D potential W(x, y) = V(x) + V(y): w = 0 and the product
/// density exp(V(x)) exp(V(y)) / Z^2, hbar = 2 ln Z.
pub fn exact_2d_separable(
    n: usize,
    v: impl Fn(f64) -> f64,
) -> Result<ExactSolution2D, MfgError> {
    let grid = PeriodicGrid2D::new(n)?;
    let z = quadrature(|x| v(x).exp(), QUAD_TOL)?;
    let theta = GridFunction2D::from_fn(grid, |x, y| (v(x).exp() * v(y).exp()) / (z * z))?;
    Ok(ExactSolution2D {
        w: GridFunction2D::zeros(grid),
        theta,
        hbar: 2.0 * z.ln(),
        family: ExactFamily::Separable2D,
    })
}

/// General 2-D potential: w = 0 always solves the system, with the Gibbs
/// density exp(W) / Z and hbar = ln Z.
pub fn exact_2d_from_w(
    n: usize,
    w: impl Fn(f64, f64) -> f64,
) -> Result<ExactSolution2D, MfgError> {
    let grid = PeriodicGrid2D::new(n)?;
    let z = quadrature_2d(|x, y| w(x, y).exp(), QUAD_TOL)?;
    let theta = GridFunction2D::from_fn(grid, |x, y| w(x, y).exp() / z)?;
    Ok(ExactSolution2D {
        w: GridFunction2D::zeros(grid),
        theta,
        hbar: z.ln(),
        family: ExactFamily::General2D,
    })
}

/// Error norms of a computed solution against a reference.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ErrorReport {
    pub u_l2: f64,
    pub u_linf: f64,
    pub m_l2: f64,
    pub m_linf: f64,
    pub hbar_err: f64,
}

impl ErrorReport {
    /// Worst of the four field norms (the level error is reported separately
    /// since it has different units in studies that shift the potential).
    pub fn max_field_error(&self) -> f64 {
        self.u_l2.max(self.u_linf).max(self.m_l2).max(self.m_linf)
    }
}

/// Compares raw solution fields against a reference on the same grid. The
/// value functions are compared as stored, so a mean-violating offset shows
/// up directly in the u norms.
pub fn error_report_parts(
    u: &GridFunction1D,
    m: &GridFunction1D,
    hbar: f64,
    exact: &ExactSolution,
) -> Result<ErrorReport, MfgError> {
    if u.grid() != exact.u.grid() || m.grid() != exact.m.grid() {
        return Err(MfgError::GridMismatch(u.grid().n(), exact.u.grid().n()));
    }
    let grid = u.grid();
    let du = GridFunction1D::new(
        grid,
        u.values().iter().zip(exact.u.values()).map(|(a, b)| a - b).collect(),
    )?;
    let dm = GridFunction1D::new(
        grid,
        m.values().iter().zip(exact.m.values()).map(|(a, b)| a - b).collect(),
    )?;
    let (u_l2, u_linf) = norms(&du);
    let (m_l2, m_linf) = norms(&dm);
    Ok(ErrorReport { u_l2, u_linf, m_l2, m_linf, hbar_err: (hbar - exact.hbar).abs() })
}

/// Grid-weighted error norms of a state against a reference solution.
pub fn error_report(state: &MfgState, exact: &ExactSolution) -> Result<ErrorReport, MfgError> {
    error_report_parts(state.u(), state.m(), state.hbar(), exact)
}

/// 2-D analogue of [`error_report_parts`].
pub fn error_report_parts_2d(
    w: &GridFunction2D,
    theta: &GridFunction2D,
    hbar: f64,
    exact: &ExactSolution2D,
) -> Result<ErrorReport, MfgError> {
    if w.grid() != exact.w.grid() || theta.grid() != exact.theta.grid() {
        return Err(MfgError::GridMismatch(w.grid().n(), exact.w.grid().n()));
    }
    let grid = w.grid();
    let dw = GridFunction2D::new(
        grid,
        w.values().iter().zip(exact.w.values()).map(|(a, b)| a - b).collect(),
    )?;
    let dtheta = GridFunction2D::new(
        grid,
        theta.values().iter().zip(exact.theta.values()).map(|(a, b)| a - b).collect(),
    )?;
    let (u_l2, u_linf) = norms2(&dw);
    let (m_l2, m_linf) = norms2(&dtheta);
    Ok(ErrorReport { u_l2, u_linf, m_l2, m_linf, hbar_err: (hbar - exact.hbar).abs() })
}

/// 2-D analogue of [`error_report`].
pub fn error_report_2d(
    state: &MfgState2D,
    exact: &ExactSolution2D,
) -> Result<ErrorReport, MfgError> {
    error_report_parts_2d(state.w(), state.theta(), state.hbar(), exact)
}
