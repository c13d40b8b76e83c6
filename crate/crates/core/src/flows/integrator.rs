//! Adaptive time steppers shared by the two stationary-state flows.
//!
//! Both integrators clip every step to the record grid t_k = k * record_every,
//! so recorded times are exact multiples and two runs with the same settings
//! sample at identical times regardless of how their step sizes evolve. The
//! explicit path is a fifth-order embedded Runge-Kutta pair with first-same-
//! as-last reuse; the implicit path is backward Euler with a damped Newton
//! solver and step-doubling error control, for stiff cases.

use nalgebra::{DMatrix, DVector};

use crate::error::MfgError;

/// Which time stepper advances the flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum IntegratorKind {
    /// Embedded explicit Runge-Kutta 4(5), the default.
    Rk45,
    /// Backward Euler with damped Newton and step doubling.
    ImplicitEuler,
}

/// Why the integration loop returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum StopReason {
    /// The observer reported the stationarity residual below its threshold.
    ResidualConverged,
    /// Integrated through the full time horizon.
    TimeLimit,
    /// Step-attempt budget exhausted before either of the above.
    MaxSteps,
}

/// Work counters for a finished integration.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct IntegratorStats {
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub rhs_evals: u64,
    pub newton_iters: u64,
    pub final_dt: f64,
}

pub(crate) struct IntegrateArgs {
    pub t_max: f64,
    pub rtol: f64,
    pub atol: f64,
    pub record_every: f64,
    pub max_steps: u64,
}

/// Vector field callback: writes dy for (t, y) into the output slice and
/// returns false when the point left the admissible domain.
pub(crate) type Rhs<'a> = dyn FnMut(f64, &[f64], &mut [f64]) -> bool + 'a;

/// Post-step callback: `observer(t, y, dy, recorded)` runs after every
/// accepted step and returns true to stop the run early.
pub(crate) type Observer<'a> = dyn FnMut(f64, &[f64], &[f64], bool) -> bool + 'a;

/// Smallest admissible step relative to the current time scale.
fn floor_step(t: f64) -> f64 {
    1e-14 * t.abs().max(1.0)
}

/// Scaled root-mean-square norm used for error control: each component is
/// divided by atol + rtol * max(|y_i|, |z_i|).
fn scaled_rms(err: &[f64], y: &[f64], z: &[f64], atol: f64, rtol: f64) -> f64 {
    let n = err.len();
    let mut acc = 0.0;
    for i in 0..n {
        let sc = atol + rtol * y[i].abs().max(z[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / n as f64).sqrt()
}

fn all_finite(y: &[f64]) -> bool {
    y.iter().all(|x| x.is_finite())
}

/// Advances y through [0, t_max]. `rhs` writes the derivative and returns
/// false when the point is outside the admissible domain; `admissible` is the
/// cheap state guard applied to proposed steps; `post_step` may reproject an
/// accepted state; `observer(t, y, dy, recorded)` runs after every accepted
/// step (recorded = true exactly on the record grid and at both endpoints)
/// and returns true to stop the run early.
pub(crate) fn integrate(
    kind: IntegratorKind,
    y: &mut [f64],
    args: &IntegrateArgs,
    rhs: &mut Rhs<'_>,
    admissible: &dyn Fn(&[f64]) -> bool,
    post_step: &mut dyn FnMut(&mut [f64]),
    observer: &mut Observer<'_>,
) -> Result<(IntegratorStats, StopReason), MfgError> {
    match kind {
        IntegratorKind::Rk45 => dopri5(y, args, rhs, admissible, post_step, observer),
        IntegratorKind::ImplicitEuler => {
            implicit_euler(y, args, rhs, admissible, post_step, observer)
        }
    }
}

/// Next clipped step target: the earlier of the next record time and t_max.
fn next_target(records_done: u64, record_every: f64, t_max: f64) -> f64 {
    ((records_done + 1) as f64 * record_every).min(t_max)
}

fn dopri5(
    y: &mut [f64],
    args: &IntegrateArgs,
    rhs: &mut Rhs<'_>,
    admissible: &dyn Fn(&[f64]) -> bool,
    post_step: &mut dyn FnMut(&mut [f64]),
    observer: &mut Observer<'_>,
) -> Result<(IntegratorStats, StopReason), MfgError> {
    // Dormand-Prince coefficients; the fifth-order weights equal the last
    // stage row, so stage seven is the derivative at the accepted point.
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];

    let n = y.len();
    let mut stats = IntegratorStats::default();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut y_stage = vec![0.0; n];
    let mut err = vec![0.0; n];

    let mut t = 0.0;
    let mut records_done: u64 = 0;

    // Derivative at the initial state doubles as the first FSAL slot.
    stats.rhs_evals += 1;
    if !rhs(t, y, &mut k[0]) || !all_finite(&k[0]) {
        return Err(MfgError::DivergentRhs { t });
    }
    if observer(t, y, &k[0], true) {
        return Ok((stats, StopReason::ResidualConverged));
    }

    // Initial step: for a vanishing derivative any step is exact, so aim
    // straight at the first record boundary; otherwise take a small fraction
    // of the magnitude ratio.
    let d0 = (y.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let d1 = (k[0].iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let first_target = next_target(0, args.record_every, args.t_max);
    let mut h = if d1 < 1e-30 {
        first_target
    } else {
        first_target.min(0.01 * d0.max(1e-6) / d1)
    };
    let mut just_rejected = false;

    while t < args.t_max {
        if stats.steps_accepted + stats.steps_rejected >= args.max_steps {
            stats.final_dt = h;
            return Ok((stats, StopReason::MaxSteps));
        }
        let target = next_target(records_done, args.record_every, args.t_max);
        let clipped = h >= target - t;
        let h_step = if clipped { target - t } else { h };
        if h_step < floor_step(t) {
            return Err(MfgError::StepSizeUnderflow { t });
        }

        // Stages 2..7; a failure inside a stage is treated as an infinite
        // error estimate so the controller halves the step.
        let mut stage_failed = false;
        for s in 0..6 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s + 1) {
                    let a = A[s][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                y_stage[i] = y[i] + h_step * acc;
            }
            stats.rhs_evals += 1;
            let (head, tail) = k.split_at_mut(s + 1);
            let _ = head;
            if !rhs(t + C[s] * h_step, &y_stage, &mut tail[0]) || !all_finite(&tail[0]) {
                stage_failed = true;
                break;
            }
        }

        let mut err_norm = f64::INFINITY;
        if !stage_failed {
            // Stage seven's argument is the fifth-order solution itself.
            for i in 0..n {
                err[i] = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    if E[j] != 0.0 {
                        err[i] += E[j] * kj[i];
                    }
                }
                err[i] *= h_step;
            }
            // y_stage currently holds y_new.
            if all_finite(&y_stage) && admissible(&y_stage) {
                err_norm = scaled_rms(&err, y, &y_stage, args.atol, args.rtol);
            }
        }

        if err_norm.is_finite() && err_norm <= 1.0 {
            t = if clipped { target } else { t + h_step };
            y.copy_from_slice(&y_stage);
            post_step(y);
            let (head, tail) = k.split_at_mut(6);
            head[0].copy_from_slice(&tail[0]);
            stats.steps_accepted += 1;

            let recorded = clipped;
            if recorded {
                records_done += 1;
            }
            let stop = observer(t, y, &k[0], recorded || t >= args.t_max);
            let growth = if just_rejected { 1.0 } else { 5.0 };
            let factor = if err_norm <= 1e-30 {
                growth
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, growth)
            };
            h = (h_step * factor).max(floor_step(t));
            just_rejected = false;
            if stop {
                stats.final_dt = h;
                return Ok((stats, StopReason::ResidualConverged));
            }
        } else {
            stats.steps_rejected += 1;
            just_rejected = true;
            h = if err_norm.is_finite() {
                h_step * (0.9 * err_norm.powf(-0.2)).clamp(0.2, 1.0)
            } else {
                h_step * 0.5
            };
            if h < floor_step(t) {
                return Err(MfgError::StepSizeUnderflow { t });
            }
        }
    }

    stats.final_dt = h;
    Ok((stats, StopReason::TimeLimit))
}

/// One backward-Euler solve: find z with z = y + h f(t_next, z), by damped
/// Newton with a forward-difference Jacobian. Returns None when Newton stalls.
#[allow(clippy::too_many_arguments)]
fn newton_solve(
    t_next: f64,
    y: &[f64],
    h: f64,
    z0: &[f64],
    args: &IntegrateArgs,
    rhs: &mut Rhs<'_>,
    stats: &mut IntegratorStats,
) -> Option<Vec<f64>> {
    let n = y.len();
    let mut z = z0.to_vec();
    let mut f = vec![0.0; n];
    let mut f_pert = vec![0.0; n];

    let residual_of = |f: &[f64], z: &[f64]| -> Vec<f64> {
        (0..n).map(|i| z[i] - y[i] - h * f[i]).collect()
    };

    stats.rhs_evals += 1;
    if !rhs(t_next, &z, &mut f) || !all_finite(&f) {
        return None;
    }
    let mut res = residual_of(&f, &z);
    let mut res_norm = scaled_rms(&res, y, &z, args.atol, args.rtol);

    for _ in 0..25 {
        if res_norm <= 0.1 {
            return Some(z);
        }
        stats.newton_iters += 1;

        // J = I - h df/dz, column by column.
        let mut jac = DMatrix::<f64>::identity(n, n);
        for j in 0..n {
            let dz = 1e-8 * (1.0 + z[j].abs());
            let saved = z[j];
            z[j] = saved + dz;
            stats.rhs_evals += 1;
            let ok = rhs(t_next, &z, &mut f_pert) && all_finite(&f_pert);
            z[j] = saved;
            if !ok {
                return None;
            }
            for i in 0..n {
                jac[(i, j)] -= h * (f_pert[i] - f[i]) / dz;
            }
        }
        let delta = jac.lu().solve(&DVector::from_column_slice(&res))?;

        // Backtracking line search on the scaled residual norm.
        let mut lambda = 1.0;
        let mut advanced = false;
        for _ in 0..7 {
            let trial: Vec<f64> = (0..n).map(|i| z[i] - lambda * delta[i]).collect();
            stats.rhs_evals += 1;
            if rhs(t_next, &trial, &mut f_pert) && all_finite(&f_pert) {
                let trial_res = residual_of(&f_pert, &trial);
                let trial_norm = scaled_rms(&trial_res, y, &trial, args.atol, args.rtol);
                if trial_norm <= (1.0 - 0.25 * lambda) * res_norm {
                    z = trial;
                    f.copy_from_slice(&f_pert);
                    res = trial_res;
                    res_norm = trial_norm;
                    advanced = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !advanced {
            return None;
        }
    }
    if res_norm <= 0.1 {
        Some(z)
    } else {
        None
    }
}

fn implicit_euler(
    y: &mut [f64],
    args: &IntegrateArgs,
    rhs: &mut Rhs<'_>,
    admissible: &dyn Fn(&[f64]) -> bool,
    post_step: &mut dyn FnMut(&mut [f64]),
    observer: &mut Observer<'_>,
) -> Result<(IntegratorStats, StopReason), MfgError> {
    let n = y.len();
    let mut stats = IntegratorStats::default();
    let mut f0 = vec![0.0; n];
    let mut t = 0.0;
    let mut records_done: u64 = 0;

    stats.rhs_evals += 1;
    if !rhs(t, y, &mut f0) || !all_finite(&f0) {
        return Err(MfgError::DivergentRhs { t });
    }
    if observer(t, y, &f0, true) {
        return Ok((stats, StopReason::ResidualConverged));
    }

    let d0 = (y.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let d1 = (f0.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let first_target = next_target(0, args.record_every, args.t_max);
    let mut h = if d1 < 1e-30 {
        first_target
    } else {
        first_target.min(0.01 * d0.max(1e-6) / d1)
    };
    let mut just_rejected = false;
    let mut dy = vec![0.0; n];

    while t < args.t_max {
        if stats.steps_accepted + stats.steps_rejected >= args.max_steps {
            stats.final_dt = h;
            return Ok((stats, StopReason::MaxSteps));
        }
        let target = next_target(records_done, args.record_every, args.t_max);
        let clipped = h >= target - t;
        let h_step = if clipped { target - t } else { h };
        if h_step < floor_step(t) {
            return Err(MfgError::StepSizeUnderflow { t });
        }

        // Explicit predictor as the Newton starting point.
        stats.rhs_evals += 1;
        if !rhs(t, y, &mut f0) || !all_finite(&f0) {
            return Err(MfgError::DivergentRhs { t });
        }
        let predictor: Vec<f64> = (0..n).map(|i| y[i] + h_step * f0[i]).collect();

        // One full step against two half steps gives the error estimate.
        let attempt = (|| -> Option<(Vec<f64>, Vec<f64>)> {
            let big = newton_solve(t + h_step, y, h_step, &predictor, args, rhs, &mut stats)?;
            let half = 0.5 * h_step;
            let mid = newton_solve(t + half, y, half, &predictor, args, rhs, &mut stats)?;
            let fine = newton_solve(t + h_step, &mid, half, &big, args, rhs, &mut stats)?;
            // The half-step solution satisfies fine = mid + half * f(t+h, fine),
            // so the derivative at the accepted point is free.
            for i in 0..n {
                dy[i] = (fine[i] - mid[i]) / half;
            }
            Some((big, fine))
        })();

        let accepted = match attempt {
            Some((big, fine)) if all_finite(&fine) && admissible(&fine) => {
                let err: Vec<f64> = (0..n).map(|i| fine[i] - big[i]).collect();
                let err_norm = scaled_rms(&err, y, &fine, args.atol, args.rtol);
                if err_norm <= 1.0 {
                    Some((fine, err_norm))
                } else {
                    None
                }
            }
            _ => None,
        };

        match accepted {
            Some((fine, err_norm)) => {
                t = if clipped { target } else { t + h_step };
                y.copy_from_slice(&fine);
                post_step(y);
                stats.steps_accepted += 1;
                let recorded = clipped;
                if recorded {
                    records_done += 1;
                }
                let stop = observer(t, y, &dy, recorded || t >= args.t_max);
                let growth = if just_rejected { 1.0 } else { 5.0 };
                let factor = if err_norm <= 1e-30 {
                    growth
                } else {
                    (0.9 / err_norm.sqrt()).clamp(0.2, growth)
                };
                h = (h_step * factor).max(floor_step(t));
                just_rejected = false;
                if stop {
                    stats.final_dt = h;
                    return Ok((stats, StopReason::ResidualConverged));
                }
            }
            None => {
                stats.steps_rejected += 1;
                just_rejected = true;
                h = h_step * 0.5;
                if h < floor_step(t) {
                    return Err(MfgError::NewtonFailure { t });
                }
            }
        }
    }

    stats.final_dt = h;
    Ok((stats, StopReason::TimeLimit))
}
