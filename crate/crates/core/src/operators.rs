//! The coupled operator on (density, value) pairs, its convex energy, and
//! the pairings used to certify solutions.
//!
//! A pair (m, u) with effective Hamiltonian level hbar solves the stationary
//! system when G(u) = ln m + hbar and the adjoint transport of m along the
//! linearization at u vanishes. The operator
//!
//!   A[m, u] = ( -G(u) + ln m,  L_u^* m )
//!
//! is monotone in the Euclidean pairing, which is what the contracting flow
//! and the variational inequality below exploit. For the standard variant the
//! system is also the critical-point condition of the convex energy
//! phi(u) = h * sum_k exp(G_k(u)).

use crate::error::MfgError;
use crate::grid::{
    mass, mass2, norms, norms2, GridFunction1D, GridFunction2D,
};
use crate::hamiltonian::{
    adjoint_apply, adjoint2_apply, congestion_terms, g2_apply, g_apply, ProblemData1D,
    ProblemData2D, Variant,
};

/// A density/value pair together with its effective Hamiltonian level.
#[derive(Clone, Debug)]
pub struct MfgState {
    m: GridFunction1D,
    u: GridFunction1D,
    hbar: f64,
}

impl MfgState {
    /// Validates positivity of m, unit mass to 1e-8, and a nodal sum of u
    /// at the rounding level relative to its magnitude.
    pub fn new(m: GridFunction1D, u: GridFunction1D, hbar: f64) -> Result<Self, MfgError> {
        if m.grid() != u.grid() {
            return Err(MfgError::GridMismatch(m.grid().n(), u.grid().n()));
        }
        if let Some(k) = m.values().iter().position(|&x| x <= 0.0) {
            return Err(MfgError::NonPositiveDensity { index: k + 1, value: m.values()[k] });
        }
        let mm = mass(&m);
        if (mm - 1.0).abs() > 1e-8 {
            return Err(MfgError::InvariantViolation(format!(
                "density mass {mm} deviates from 1 by more than 1e-8"
            )));
        }
        let n = u.grid().n() as f64;
        let u_sum: f64 = u.values().iter().sum();
        if u_sum.abs() > 1e-8 * n * u.max_abs() {
            return Err(MfgError::InvariantViolation(format!(
                "value function has nodal sum {u_sum}, expected mean zero"
            )));
        }
        if !hbar.is_finite() {
            return Err(MfgError::InvariantViolation("non-finite hbar".into()));
        }
        Ok(Self { m, u, hbar })
    }

    pub fn m(&self) -> &GridFunction1D {
        &self.m
    }

    pub fn u(&self) -> &GridFunction1D {
        &self.u
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }
}

/// 2-D analogue of MfgState.
#[derive(Clone, Debug)]
pub struct MfgState2D {
    theta: GridFunction2D,
    w: GridFunction2D,
    hbar: f64,
}

impl MfgState2D {
    pub fn new(theta: GridFunction2D, w: GridFunction2D, hbar: f64) -> Result<Self, MfgError> {
        if theta.grid() != w.grid() {
            return Err(MfgError::GridMismatch(theta.grid().n(), w.grid().n()));
        }
        if let Some(k) = theta.values().iter().position(|&x| x <= 0.0) {
            return Err(MfgError::NonPositiveDensity { index: k + 1, value: theta.values()[k] });
        }
        let mm = mass2(&theta);
        if (mm - 1.0).abs() > 1e-8 {
            return Err(MfgError::InvariantViolation(format!(
                "density mass {mm} deviates from 1 by more than 1e-8"
            )));
        }
        let n2 = (theta.grid().n() * theta.grid().n()) as f64;
        let w_sum: f64 = w.values().iter().sum();
        if w_sum.abs() > 1e-8 * n2 * w.max_abs() {
            return Err(MfgError::InvariantViolation(format!(
                "value function has nodal sum {w_sum}, expected mean zero"
            )));
        }
        if !hbar.is_finite() {
            return Err(MfgError::InvariantViolation("non-finite hbar".into()));
        }
        Ok(Self { theta, w, hbar })
    }

    pub fn theta(&self) -> &GridFunction2D {
        &self.theta
    }

    pub fn w(&self) -> &GridFunction2D {
        &self.w
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }
}

/// Grid-weighted l2 and max norms of the two stationarity blocks.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct Residual {
    pub hj_l2: f64,
    pub hj_linf: f64,
    pub fp_l2: f64,
    pub fp_linf: f64,
}

impl Residual {
    /// The stopping rule uses the worst of all four norms.
    pub fn max(&self) -> f64 {
        self.hj_l2.max(self.hj_linf).max(self.fp_l2).max(self.fp_linf)
    }
}

fn check_positive(m: &GridFunction1D) -> Result<(), MfgError> {
    if let Some(k) = m.values().iter().position(|&x| x <= 0.0) {
        return Err(MfgError::NonPositiveDensity { index: k + 1, value: m.values()[k] });
    }
    Ok(())
}

/// Applies the coupled operator, returning the Hamilton-Jacobi block
/// -G(u) + ln m (or its congestion analogue) and the transport block.
pub fn a_apply(
    m: &GridFunction1D,
    u: &GridFunction1D,
    data: &ProblemData1D,
) -> Result<(GridFunction1D, GridFunction1D), MfgError> {
    if m.grid() != data.grid() || u.grid() != data.grid() {
        return Err(MfgError::GridMismatch(m.grid().n(), data.grid().n()));
    }
    check_positive(m)?;
    let n = data.grid().n();
    match data.variant() {
        Variant::Standard => {
            let g = g_apply(u, data);
            let mut hj = GridFunction1D::zeros(data.grid());
            for i in 1..=n {
                hj.set(i, -g.get(i) + m.get(i).ln());
            }
            let fp = adjoint_apply(u, m, data);
            Ok((hj, fp))
        }
        Variant::Congestion => {
            let (hjv, fp) = congestion_terms(m, u, data)?;
            let mut hj = GridFunction1D::zeros(data.grid());
            for i in 1..=n {
                hj.set(i, -hjv.get(i) + m.get(i).ln());
            }
            Ok((hj, fp))
        }
    }
}

/// Stationarity residual of a state: the Hamilton-Jacobi block shifted by
/// hbar and the raw transport block, in both norms.
pub fn residual(state: &MfgState, data: &ProblemData1D) -> Result<Residual, MfgError> {
    let (mut hj, fp) = a_apply(state.m(), state.u(), data)?;
    let n = data.grid().n();
    for i in 1..=n {
        hj.set(i, hj.get(i) + state.hbar());
    }
    let (hj_l2, hj_linf) = norms(&hj);
    let (fp_l2, fp_linf) = norms(&fp);
    Ok(Residual { hj_l2, hj_linf, fp_l2, fp_linf })
}

/// Convex energy phi(u) = h * sum exp(G_k(u)) for the standard variant.
pub fn energy_phi(u: &GridFunction1D, data: &ProblemData1D) -> f64 {
    let g = g_apply(u, data);
    data.grid().h() * g.values().iter().map(|x| x.exp()).sum::<f64>()
}

/// Gradient of the energy: h * adjoint transport of exp(G(u)).
pub fn phi_gradient(u: &GridFunction1D, data: &ProblemData1D) -> GridFunction1D {
    let g = g_apply(u, data);
    let mtilde =
        GridFunction1D::new(data.grid(), g.values().iter().map(|x| x.exp()).collect()).unwrap();
    let mut out = adjoint_apply(u, &mtilde, data);
    let h = data.grid().h();
    for x in out.values_mut() {
        *x *= h;
    }
    out
}

/// Effective Hamiltonian read off a value function alone: hbar = ln phi(u).
/// With this level the density exp(G(u) - hbar) has unit mass by construction.
pub fn hbar_from_u(u: &GridFunction1D, data: &ProblemData1D) -> f64 {
    energy_phi(u, data).ln()
}

/// Mass-preserving level for the contracting flow: the nodal mean of
/// G(u) - ln m (congestion: hj(m, u) - ln m). Subtracting it from the density
/// equation makes the flow conserve total mass exactly, and at a solution it
/// equals the effective Hamiltonian.
pub fn hbar_rate(
    m: &GridFunction1D,
    u: &GridFunction1D,
    data: &ProblemData1D,
) -> Result<f64, MfgError> {
    if m.grid() != data.grid() || u.grid() != data.grid() {
        return Err(MfgError::GridMismatch(m.grid().n(), data.grid().n()));
    }
    check_positive(m)?;
    let n = data.grid().n();
    let total = match data.variant() {
        Variant::Standard => {
            let g = g_apply(u, data);
            (1..=n).map(|i| g.get(i) - m.get(i).ln()).sum::<f64>()
        }
        Variant::Congestion => {
            let (hj, _) = congestion_terms(m, u, data)?;
            (1..=n).map(|i| hj.get(i) - m.get(i).ln()).sum::<f64>()
        }
    };
    Ok(total / n as f64)
}

/// Euclidean pairing of A[theta, v] - (hbar, 0) against (theta - m, v - u).
/// Nonnegative for every admissible test pair exactly when the state solves
/// the stationary system; theta should carry unit mass like m does.
pub fn variational_inequality(
    state: &MfgState,
    theta: &GridFunction1D,
    v: &GridFunction1D,
    data: &ProblemData1D,
) -> Result<f64, MfgError> {
    let (hj, fp) = a_apply(theta, v, data)?;
    let n = data.grid().n();
    let mut total = 0.0;
    for i in 1..=n {
        total += (hj.get(i) - state.hbar()) * (theta.get(i) - state.m().get(i));
        total += fp.get(i) * (v.get(i) - state.u().get(i));
    }
    Ok(total)
}

/// Monotonicity pairing <A[m1,u1] - A[m2,u2], (m1-m2, u1-u2)> together with
/// the absolute-sum scale of its terms, for rounding-aware sign checks.
pub fn monotonicity_gap_with_scale(
    m1: &GridFunction1D,
    u1: &GridFunction1D,
    m2: &GridFunction1D,
    u2: &GridFunction1D,
    data: &ProblemData1D,
) -> Result<(f64, f64), MfgError> {
    let (hj1, fp1) = a_apply(m1, u1, data)?;
    let (hj2, fp2) = a_apply(m2, u2, data)?;
    let n = data.grid().n();
    let mut gap = 0.0;
    let mut scale = 1.0;
    for i in 1..=n {
        let t1 = (hj1.get(i) - hj2.get(i)) * (m1.get(i) - m2.get(i));
        let t2 = (fp1.get(i) - fp2.get(i)) * (u1.get(i) - u2.get(i));
        gap += t1 + t2;
        scale += t1.abs() + t2.abs();
    }
    Ok((gap, scale))
}

/// Monotonicity pairing alone; nonnegative for the standard variant.
pub fn monotonicity_gap(
    m1: &GridFunction1D,
    u1: &GridFunction1D,
    m2: &GridFunction1D,
    u2: &GridFunction1D,
    data: &ProblemData1D,
) -> Result<f64, MfgError> {
    Ok(monotonicity_gap_with_scale(m1, u1, m2, u2, data)?.0)
}

fn check_positive2(theta: &GridFunction2D) -> Result<(), MfgError> {
    if let Some(k) = theta.values().iter().position(|&x| x <= 0.0) {
        return Err(MfgError::NonPositiveDensity { index: k + 1, value: theta.values()[k] });
    }
    Ok(())
}

/// 2-D coupled operator blocks.
pub fn a_apply_2d(
    theta: &GridFunction2D,
    w: &GridFunction2D,
    data: &ProblemData2D,
) -> Result<(GridFunction2D, GridFunction2D), MfgError> {
    if theta.grid() != data.grid() || w.grid() != data.grid() {
        return Err(MfgError::GridMismatch(theta.grid().n(), data.grid().n()));
    }
    check_positive2(theta)?;
    let g = g2_apply(w, data);
    let mut hj = GridFunction2D::zeros(data.grid());
    for (k, out) in hj.values_mut().iter_mut().enumerate() {
        *out = -g.values()[k] + theta.values()[k].ln();
    }
    let fp = adjoint2_apply(w, theta, data);
    Ok((hj, fp))
}

/// 2-D stationarity residual.
pub fn residual_2d(state: &MfgState2D, data: &ProblemData2D) -> Result<Residual, MfgError> {
    let (mut hj, fp) = a_apply_2d(state.theta(), state.w(), data)?;
    for x in hj.values_mut() {
        *x += state.hbar();
    }
    let (hj_l2, hj_linf) = norms2(&hj);
    let (fp_l2, fp_linf) = norms2(&fp);
    Ok(Residual { hj_l2, hj_linf, fp_l2, fp_linf })
}

/// 2-D mass-preserving level: the nodal mean of G2(w) - ln theta.
pub fn hbar_rate_2d(
    theta: &GridFunction2D,
    w: &GridFunction2D,
    data: &ProblemData2D,
) -> Result<f64, MfgError> {
    if theta.grid() != data.grid() || w.grid() != data.grid() {
        return Err(MfgError::GridMismatch(theta.grid().n(), data.grid().n()));
    }
    check_positive2(theta)?;
    let g = g2_apply(w, data);
    let n2 = data.grid().n() * data.grid().n();
    let total: f64 =
        (0..n2).map(|k| g.values()[k] - theta.values()[k].ln()).sum();
    Ok(total / n2 as f64)
}

/// 2-D energy h^2 * sum exp(G2_k(w)).
pub fn energy_phi_2d(w: &GridFunction2D, data: &ProblemData2D) -> f64 {
    let g = g2_apply(w, data);
    let h = data.grid().h();
    h * h * g.values().iter().map(|x| x.exp()).sum::<f64>()
}
