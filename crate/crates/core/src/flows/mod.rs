//! The two time-stepping solvers that reach stationary states: a gradient
//! flow on the convex energy in the value function, and a mass-preserving
//! contracting flow on the full density/value pair.
//!
//! The gradient flow integrates du/dt = -L_u^* exp(G(u)); its limits are
//! energy critical points, normalized into solutions by hbar = ln phi(u).
//! The contracting flow integrates
//!
//!   dm/dt = G(u) - ln m - hbar(t),   du/dt = -L_u^* m,
//!
//! with hbar(t) the nodal mean of G(u) - ln m, which makes the density sum
//! invariant in time. Because the coupled operator is monotone, the squared
//! Euclidean distance between any two trajectories is non-increasing. Both
//! right-hand sides are exactly the negated stationarity residual, so the
//! stopping rule and the reported residual share one definition.

mod integrator;

pub use integrator::{IntegratorKind, IntegratorStats, StopReason};

use crate::error::MfgError;
use crate::grid::{
    mass, mass2, mean_zero_project, mean_zero_project2, mean_zero_project_in_place,
    GridFunction1D, GridFunction2D,
};
use crate::hamiltonian::{
    adjoint_apply, adjoint_from_grads, adjoint2_from_grads, congestion_kernel, g_apply, g_values,
    g2_values, hamiltonian_grads, quadratic_grads_2d, CongestionScratch, ProblemData1D,
    ProblemData2D, Variant,
};
use crate::operators::{hbar_rate, hbar_rate_2d, MfgState, MfgState2D};
use integrator::IntegrateArgs;

/// Settings shared by every flow run.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct FlowConfig {
    /// Integration horizon.
    pub t_max: f64,
    /// Relative local error tolerance.
    pub rtol: f64,
    /// Absolute local error tolerance.
    pub atol: f64,
    /// Stop early once the stationarity residual max-norm falls below this.
    pub residual_stop: f64,
    /// Diagnostic sampling interval; every recorded time is an exact multiple.
    pub record_every: f64,
    /// Budget of step attempts before giving up (a soft stop, not an error).
    pub max_steps: u64,
    pub integrator: IntegratorKind,
}

impl FlowConfig {
    /// Defaults tuned for the bundled problems: tolerances 1e-6/1e-8,
    /// residual threshold 1e-9, one hundred records across the horizon.
    ///
    /// The upwind Hamiltonian gradient jumps where the active slope branch
    /// switches, so the embedded error estimate cannot shrink below the jump
    /// times the step size. Tolerances much below 1e-6 make the controller
    /// crawl whenever a trajectory crosses such a kink; tighten them only for
    /// polishing runs that start near a steady state.
    pub fn new(t_max: f64) -> Self {
        Self {
            t_max,
            rtol: 1e-6,
            atol: 1e-8,
            residual_stop: 1e-9,
            record_every: t_max / 100.0,
            max_steps: 10_000_000,
            integrator: IntegratorKind::Rk45,
        }
    }

    pub fn validate(&self) -> Result<(), MfgError> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(MfgError::InvalidConfig("t_max must be positive and finite".into()));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(MfgError::InvalidConfig("rtol and atol must be positive".into()));
        }
        if self.residual_stop.is_nan() || self.residual_stop < 0.0 {
            return Err(MfgError::InvalidConfig("residual_stop must be nonnegative".into()));
        }
        if !(self.record_every > 0.0 && self.record_every.is_finite()) {
            return Err(MfgError::InvalidConfig("record_every must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(MfgError::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    fn integrate_args(&self) -> IntegrateArgs {
        IntegrateArgs {
            t_max: self.t_max,
            rtol: self.rtol,
            atol: self.atol,
            record_every: self.record_every,
            max_steps: self.max_steps,
        }
    }
}

/// Diagnostics captured at one recorded time.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct Sample {
    pub t: f64,
    /// h * sum exp(hamiltonian values): the convex energy for the gradient
    /// flow and the standard monotone flow, its analogue under congestion.
    pub energy: f64,
    /// Stationarity residual max-norm (for the gradient flow, of the state
    /// reconstructed via hbar = ln phi).
    pub residual: f64,
    /// Total density mass; the contracting flow conserves it.
    pub mass: f64,
    /// Nodal sum of the value function, held at zero by reprojection.
    pub u_sum: f64,
    pub min_density: f64,
    pub hbar: f64,
}

/// Recorded time series of a flow run.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub stats: IntegratorStats,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn final_sample(&self) -> &Sample {
        self.samples.last().expect("a trajectory always records its initial time")
    }
}

/// Gradient-flow vector field: -L_u^* exp(G(u)). Sums to zero, so the flow
/// preserves the nodal mean of u. This is the energy gradient up to the
/// constant factor h, a pure time rescaling.
pub fn gradient_rhs(u: &GridFunction1D, data: &ProblemData1D) -> GridFunction1D {
    let g = g_apply(u, data);
    let mtilde =
        GridFunction1D::new(data.grid(), g.values().iter().map(|x| x.exp()).collect()).unwrap();
    let mut out = adjoint_apply(u, &mtilde, data);
    for x in out.values_mut() {
        *x = -*x;
    }
    out
}

/// Contracting-flow vector field on the pair (m, u); errors on m <= 0.
/// Both components sum to zero, giving mass and mean conservation.
pub fn monotonic_rhs(
    m: &GridFunction1D,
    u: &GridFunction1D,
    data: &ProblemData1D,
) -> Result<(GridFunction1D, GridFunction1D), MfgError> {
    let level = hbar_rate(m, u, data)?;
    let n = data.grid().n();
    let mut dm = GridFunction1D::zeros(data.grid());
    match data.variant() {
        Variant::Standard => {
            let g = g_apply(u, data);
            for i in 1..=n {
                dm.set(i, g.get(i) - m.get(i).ln() - level);
            }
            let mut du = adjoint_apply(u, m, data);
            for x in du.values_mut() {
                *x = -*x;
            }
            Ok((dm, du))
        }
        Variant::Congestion => {
            let (hj, fp) = crate::hamiltonian::congestion_terms(m, u, data)?;
            for i in 1..=n {
                dm.set(i, hj.get(i) - m.get(i).ln() - level);
            }
            let mut du = fp;
            for x in du.values_mut() {
                *x = -*x;
            }
            Ok((dm, du))
        }
    }
}

/// 2-D contracting-flow vector field on (theta, w).
pub fn monotonic_rhs_2d(
    theta: &GridFunction2D,
    w: &GridFunction2D,
    data: &ProblemData2D,
) -> Result<(GridFunction2D, GridFunction2D), MfgError> {
    let level = hbar_rate_2d(theta, w, data)?;
    let g = crate::hamiltonian::g2_apply(w, data);
    let mut dtheta = GridFunction2D::zeros(data.grid());
    for (k, out) in dtheta.values_mut().iter_mut().enumerate() {
        *out = g.values()[k] - theta.values()[k].ln() - level;
    }
    let mut dw = crate::hamiltonian::adjoint2_apply(w, theta, data);
    for x in dw.values_mut() {
        *x = -*x;
    }
    Ok((dtheta, dw))
}

/// Drives a plain ODE system with the same adaptive steppers the flows use.
/// The observer plumbing (residual stopping, sampling) belongs to the flow
/// solvers; this wrapper terminates at t_max or on the step budget, with
/// `admissible` guarding proposed states the way the flows guard positivity.
pub fn integrate(
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]) -> bool,
    y0: &[f64],
    cfg: &FlowConfig,
    admissible: impl Fn(&[f64]) -> bool,
) -> Result<(Vec<f64>, IntegratorStats, StopReason), MfgError> {
    cfg.validate()?;
    let mut y = y0.to_vec();
    let (stats, stop) = integrator::integrate(
        cfg.integrator,
        &mut y,
        &cfg.integrate_args(),
        &mut rhs,
        &admissible,
        &mut |_| {},
        &mut |_, _, _, _| false,
    )?;
    Ok((y, stats, stop))
}

/// Gradient-flow solve; records nothing beyond the trajectory samples.
pub fn solve_gradient_flow(
    data: &ProblemData1D,
    u0: &GridFunction1D,
    cfg: &FlowConfig,
) -> Result<(MfgState, Trajectory), MfgError> {
    solve_gradient_flow_with(data, u0, cfg, |_, _, _| {})
}

/// Gradient-flow solve with a snapshot callback invoked at every recorded
/// time as (t, density, value): the density is reconstructed on the fly as
/// exp(G(u) - ln phi(u)).
pub fn solve_gradient_flow_with(
    data: &ProblemData1D,
    u0: &GridFunction1D,
    cfg: &FlowConfig,
    mut on_record: impl FnMut(f64, &[f64], &[f64]),
) -> Result<(MfgState, Trajectory), MfgError> {
    cfg.validate()?;
    if data.variant() != Variant::Standard {
        return Err(MfgError::InvalidConfig(
            "the gradient flow is defined for the standard variant only".into(),
        ));
    }
    if u0.grid() != data.grid() {
        return Err(MfgError::GridMismatch(u0.grid().n(), data.grid().n()));
    }
    let n = data.grid().n();
    let h = data.grid().h();
    let v: Vec<f64> = data.v().values().to_vec();
    let b: Vec<f64> = data.b().values().to_vec();

    let mut y = mean_zero_project(u0).values().to_vec();

    let mut g = vec![0.0; n];
    let mut eg = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    let (v_rhs, b_rhs) = (v.clone(), b.clone());
    let mut rhs = move |_t: f64, yk: &[f64], dy: &mut [f64]| -> bool {
        g_values(yk, &v_rhs, &b_rhs, &mut g);
        for k in 0..n {
            eg[k] = g[k].exp();
        }
        hamiltonian_grads(yk, &b_rhs, &mut dp, &mut dq);
        adjoint_from_grads(&dp, &dq, &eg, dy);
        for d in dy.iter_mut() {
            *d = -*d;
        }
        true
    };

    let mut samples: Vec<Sample> = Vec::new();
    let mut latest: Option<Sample> = None;
    let mut gob = vec![0.0; n];
    let mut mrec = vec![0.0; n];
    let residual_stop = cfg.residual_stop;
    let mut observer = |t: f64, yk: &[f64], dy: &[f64], recorded: bool| -> bool {
        g_values(yk, &v, &b, &mut gob);
        let phi: f64 = h * gob.iter().map(|x| x.exp()).sum::<f64>();
        let hbar = phi.ln();
        let residual = dy.iter().fold(0.0f64, |a, &x| a.max(x.abs())) / phi;
        let mut msum = 0.0;
        let mut min_density = f64::INFINITY;
        for k in 0..n {
            mrec[k] = (gob[k] - hbar).exp();
            msum += mrec[k];
            min_density = min_density.min(mrec[k]);
        }
        let sample = Sample {
            t,
            energy: phi,
            residual,
            mass: h * msum,
            u_sum: yk.iter().sum(),
            min_density,
            hbar,
        };
        latest = Some(sample);
        if recorded {
            samples.push(sample);
            on_record(t, &mrec, yk);
        }
        residual <= residual_stop
    };

    let (stats, stop) = integrator::integrate(
        cfg.integrator,
        &mut y,
        &cfg.integrate_args(),
        &mut rhs,
        &|_| true,
        &mut mean_zero_project_in_place,
        &mut observer,
    )?;

    let last = latest.expect("observer runs at least at t = 0");
    if samples.last().map(|s| s.t) != Some(last.t) {
        samples.push(last);
    }

    let u = GridFunction1D::new(data.grid(), y)?;
    let hbar = crate::operators::hbar_from_u(&u, data);
    let g_final = g_apply(&u, data);
    let m = GridFunction1D::new(
        data.grid(),
        g_final.values().iter().map(|x| (x - hbar).exp()).collect(),
    )?;
    let state = MfgState::new(m, u, hbar)?;
    Ok((state, Trajectory { samples, stats, stop }))
}

/// Contracting-flow solve for the 1-D standard or congestion variant.
pub fn solve_monotonic_flow(
    data: &ProblemData1D,
    m0: &GridFunction1D,
    u0: &GridFunction1D,
    cfg: &FlowConfig,
) -> Result<(MfgState, Trajectory), MfgError> {
    solve_monotonic_flow_with(data, m0, u0, cfg, |_, _, _| {})
}

/// Contracting-flow solve with a snapshot callback invoked at every recorded
/// time as (t, density, value). The initial density is renormalized to unit
/// mass and the initial value shifted to mean zero on ingestion.
pub fn solve_monotonic_flow_with(
    data: &ProblemData1D,
    m0: &GridFunction1D,
    u0: &GridFunction1D,
    cfg: &FlowConfig,
    mut on_record: impl FnMut(f64, &[f64], &[f64]),
) -> Result<(MfgState, Trajectory), MfgError> {
    cfg.validate()?;
    if m0.grid() != data.grid() || u0.grid() != data.grid() {
        return Err(MfgError::GridMismatch(m0.grid().n(), data.grid().n()));
    }
    if let Some(k) = m0.values().iter().position(|&x| x <= 0.0) {
        return Err(MfgError::NonPositiveDensity { index: k + 1, value: m0.values()[k] });
    }
    let n = data.grid().n();
    let h = data.grid().h();
    let variant = data.variant();
    let v: Vec<f64> = data.v().values().to_vec();
    let b: Vec<f64> = data.b().values().to_vec();

    let m0_mass = mass(m0);
    let mut y = vec![0.0; 2 * n];
    for (dst, src) in y.iter_mut().zip(m0.values()) {
        *dst = src / m0_mass;
    }
    y[n..].copy_from_slice(mean_zero_project(u0).values());

    let mut g = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    let mut congestion = CongestionScratch::new(n);
    let (v_rhs, b_rhs) = (v.clone(), b.clone());
    let mut rhs = move |_t: f64, yk: &[f64], dy: &mut [f64]| -> bool {
        let (mk, uk) = yk.split_at(n);
        if mk.iter().any(|&x| x <= 0.0) {
            return false;
        }
        let (dm, du) = dy.split_at_mut(n);
        match variant {
            Variant::Standard => {
                g_values(uk, &v_rhs, &b_rhs, &mut g);
                hamiltonian_grads(uk, &b_rhs, &mut dp, &mut dq);
                adjoint_from_grads(&dp, &dq, mk, du);
            }
            Variant::Congestion => {
                congestion_kernel(mk, uk, &v_rhs, &mut congestion, &mut g, du);
            }
        }
        let mut level = 0.0;
        for k in 0..n {
            dm[k] = g[k] - mk[k].ln();
            level += dm[k];
        }
        level /= n as f64;
        for d in dm.iter_mut() {
            *d -= level;
        }
        for d in du.iter_mut() {
            *d = -*d;
        }
        true
    };

    let mut samples: Vec<Sample> = Vec::new();
    let mut latest: Option<Sample> = None;
    let mut gob = vec![0.0; n];
    let mut fpob = vec![0.0; n];
    let mut congestion_ob = CongestionScratch::new(n);
    let residual_stop = cfg.residual_stop;
    let mut observer = |t: f64, yk: &[f64], dy: &[f64], recorded: bool| -> bool {
        let (mk, uk) = yk.split_at(n);
        match variant {
            Variant::Standard => g_values(uk, &v, &b, &mut gob),
            Variant::Congestion => {
                congestion_kernel(mk, uk, &v, &mut congestion_ob, &mut gob, &mut fpob)
            }
        }
        let energy: f64 = h * gob.iter().map(|x| x.exp()).sum::<f64>();
        let hbar: f64 =
            (0..n).map(|k| gob[k] - mk[k].ln()).sum::<f64>() / n as f64;
        let residual = dy.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let sample = Sample {
            t,
            energy,
            residual,
            mass: h * mk.iter().sum::<f64>(),
            u_sum: uk.iter().sum(),
            min_density: mk.iter().cloned().fold(f64::INFINITY, f64::min),
            hbar,
        };
        latest = Some(sample);
        if recorded {
            samples.push(sample);
            on_record(t, mk, uk);
        }
        residual <= residual_stop
    };

    let (stats, stop) = integrator::integrate(
        cfg.integrator,
        &mut y,
        &cfg.integrate_args(),
        &mut rhs,
        &|yk: &[f64]| yk[..n].iter().all(|&x| x > 0.0),
        &mut |yk: &mut [f64]| mean_zero_project_in_place(&mut yk[n..]),
        &mut observer,
    )?;

    let last = latest.expect("observer runs at least at t = 0");
    if samples.last().map(|s| s.t) != Some(last.t) {
        samples.push(last);
    }

    let m = GridFunction1D::new(data.grid(), y[..n].to_vec())?;
    let u = GridFunction1D::new(data.grid(), y[n..].to_vec())?;
    let hbar = hbar_rate(&m, &u, data)?;
    let state = MfgState::new(m, u, hbar)?;
    Ok((state, Trajectory { samples, stats, stop }))
}

/// 2-D contracting-flow solve.
pub fn solve_monotonic_flow_2d(
    data: &ProblemData2D,
    theta0: &GridFunction2D,
    w0: &GridFunction2D,
    cfg: &FlowConfig,
) -> Result<(MfgState2D, Trajectory), MfgError> {
    solve_monotonic_flow_2d_with(data, theta0, w0, cfg, |_, _, _| {})
}

/// 2-D contracting-flow solve with a snapshot callback (t, density, value),
/// slices in row-major order with x fastest.
pub fn solve_monotonic_flow_2d_with(
    data: &ProblemData2D,
    theta0: &GridFunction2D,
    w0: &GridFunction2D,
    cfg: &FlowConfig,
    mut on_record: impl FnMut(f64, &[f64], &[f64]),
) -> Result<(MfgState2D, Trajectory), MfgError> {
    cfg.validate()?;
    if theta0.grid() != data.grid() || w0.grid() != data.grid() {
        return Err(MfgError::GridMismatch(theta0.grid().n(), data.grid().n()));
    }
    if let Some(k) = theta0.values().iter().position(|&x| x <= 0.0) {
        return Err(MfgError::NonPositiveDensity { index: k + 1, value: theta0.values()[k] });
    }
    let n = data.grid().n();
    let nn = n * n;
    let h = data.grid().h();
    let wpot: Vec<f64> = data.w().values().to_vec();

    let theta0_mass = mass2(theta0);
    let mut y = vec![0.0; 2 * nn];
    for (dst, src) in y.iter_mut().zip(theta0.values()) {
        *dst = src / theta0_mass;
    }
    y[nn..].copy_from_slice(mean_zero_project2(w0).values());

    let mut g = vec![0.0; nn];
    let mut dpx = vec![0.0; nn];
    let mut dqx = vec![0.0; nn];
    let mut dpy = vec![0.0; nn];
    let mut dqy = vec![0.0; nn];
    let wpot_rhs = wpot.clone();
    let mut rhs = move |_t: f64, yk: &[f64], dy: &mut [f64]| -> bool {
        let (tk, wk) = yk.split_at(nn);
        if tk.iter().any(|&x| x <= 0.0) {
            return false;
        }
        let (dt, dw) = dy.split_at_mut(nn);
        g2_values(wk, n, &wpot_rhs, &mut g);
        quadratic_grads_2d(wk, n, &mut dpx, &mut dqx, &mut dpy, &mut dqy);
        adjoint2_from_grads(n, &dpx, &dqx, &dpy, &dqy, tk, dw);
        let mut level = 0.0;
        for k in 0..nn {
            dt[k] = g[k] - tk[k].ln();
            level += dt[k];
        }
        level /= nn as f64;
        for d in dt.iter_mut() {
            *d -= level;
        }
        for d in dw.iter_mut() {
            *d = -*d;
        }
        true
    };

    let mut samples: Vec<Sample> = Vec::new();
    let mut latest: Option<Sample> = None;
    let mut gob = vec![0.0; nn];
    let residual_stop = cfg.residual_stop;
    let mut observer = |t: f64, yk: &[f64], dy: &[f64], recorded: bool| -> bool {
        let (tk, wk) = yk.split_at(nn);
        g2_values(wk, n, &wpot, &mut gob);
        let energy: f64 = h * h * gob.iter().map(|x| x.exp()).sum::<f64>();
        let hbar: f64 =
            (0..nn).map(|k| gob[k] - tk[k].ln()).sum::<f64>() / nn as f64;
        let residual = dy.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let sample = Sample {
            t,
            energy,
            residual,
            mass: h * h * tk.iter().sum::<f64>(),
            u_sum: wk.iter().sum(),
            min_density: tk.iter().cloned().fold(f64::INFINITY, f64::min),
            hbar,
        };
        latest = Some(sample);
        if recorded {
            samples.push(sample);
            on_record(t, tk, wk);
        }
        residual <= residual_stop
    };

    let (stats, stop) = integrator::integrate(
        cfg.integrator,
        &mut y,
        &cfg.integrate_args(),
        &mut rhs,
        &|yk: &[f64]| yk[..nn].iter().all(|&x| x > 0.0),
        &mut |yk: &mut [f64]| mean_zero_project_in_place(&mut yk[nn..]),
        &mut observer,
    )?;

    let last = latest.expect("observer runs at least at t = 0");
    if samples.last().map(|s| s.t) != Some(last.t) {
        samples.push(last);
    }

    let theta = GridFunction2D::new(data.grid(), y[..nn].to_vec())?;
    let w = GridFunction2D::new(data.grid(), y[nn..].to_vec())?;
    let hbar = hbar_rate_2d(&theta, &w, data)?;
    let state = MfgState2D::new(theta, w, hbar)?;
    Ok((state, Trajectory { samples, stats, stop }))
}
