//! Randomized verification suites and convergence studies.
//!
//! Every suite is deterministic for a given master seed: per-case seeds are
//! drawn from a seeded stream cipher, and each failure record carries the
//! case seed so a single case can be replayed in isolation. Reports
//! serialize to JSON for the command-line tools.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::MfgError;
use crate::exact::{error_report, exact_gradient_drift, exact_zero_drift};
use crate::flows::{solve_gradient_flow, solve_monotonic_flow_with, FlowConfig, Trajectory};
use crate::grid::{mass, GridFunction1D, PeriodicGrid1D};
use crate::hamiltonian::{
    adjoint_apply, hamiltonian_grads, linearize_apply, ProblemData1D, Variant,
};
use crate::operators::monotonicity_gap_with_scale;

/// Inner-product mismatch allowed by the adjoint identity check, relative
/// to the accumulated term magnitude.
pub const ADJOINT_TOL: f64 = 1e-12;
/// Pairing-gap floor for the standard-variant monotonicity check.
pub const MONOTONICITY_TOL: f64 = 1e-12;
/// Squared-distance growth allowed per unit time between two trajectories
/// of the contracting flow.
pub const CONTRACTION_ALLOWANCE: f64 = 1e-6;
/// Errors at or below this are treated as "already at the floor" by the
/// refinement pass rule, where further refinement cannot show improvement.
pub const REFINEMENT_ERROR_FLOOR: f64 = 1e-10;

const ADJOINT_CASES_PER_SIZE: usize = 100;
const MONOTONICITY_CASES_PER_SIZE: usize = 1000;

/// One failed randomized case.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CaseFailure {
    pub size: usize,
    /// Seed that replays exactly this case.
    pub case_seed: u64,
    pub value: f64,
    pub threshold: f64,
    /// For operator checks that can localize a defect: the 1-based node
    /// index where the discrepancy is largest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub located_index: Option<usize>,
}

/// Outcome of one randomized suite.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub sizes: Vec<usize>,
    pub cases: usize,
    pub passes: usize,
    pub failures: Vec<CaseFailure>,
    pub pass: bool,
    /// Suite-specific extras, e.g. gap quantiles for variants where the
    /// sign is observed rather than asserted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite reports contain only plain data")
    }
}

/// Zero-mean trigonometric polynomial with a handful of low modes and
/// coefficients shrinking like 1/k; smooth on every grid that resolves it.
pub fn random_smooth_field(
    grid: PeriodicGrid1D,
    rng: &mut impl Rng,
    amplitude: f64,
) -> GridFunction1D {
    let kmax = (grid.n() / 2).saturating_sub(1).clamp(1, 6);
    let coeffs: Vec<(f64, f64)> = (1..=kmax)
        .map(|k| {
            let a: f64 = rng.random_range(-amplitude..=amplitude) / k as f64;
            let b: f64 = rng.random_range(-amplitude..=amplitude) / k as f64;
            (a, b)
        })
        .collect();
    GridFunction1D::from_fn(grid, |x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(i, (a, b))| {
                let arg = std::f64::consts::TAU * (i + 1) as f64 * x;
                a * arg.cos() + b * arg.sin()
            })
            .sum()
    })
    .expect("grid came from an existing function")
}

/// Strictly positive unit-mass density: the exponential of a random smooth
/// field, renormalized.
pub fn random_positive_density(
    grid: PeriodicGrid1D,
    rng: &mut impl Rng,
    amplitude: f64,
) -> GridFunction1D {
    let f = random_smooth_field(grid, rng, amplitude);
    let mut m = GridFunction1D::new(grid, f.values().iter().map(|x| x.exp()).collect())
        .expect("exponentials are finite for bounded fields");
    let total = mass(&m);
    for x in m.values_mut() {
        *x /= total;
    }
    m
}

fn pairing(a: &GridFunction1D, b: &GridFunction1D) -> (f64, f64) {
    let mut dot = 0.0;
    let mut scale = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        scale += (x * y).abs();
    }
    (dot, scale)
}

/// Checks `<L_u v, w> == <v, L_u^* w>` on random triples: the discrete
/// transport operator against its hand-assembled adjoint.
pub fn run_adjoint_suite(seed: u64, sizes: &[usize]) -> Result<SuiteReport, MfgError> {
    run_adjoint_suite_inner(seed, sizes, false)
}

/// Same harness run against a deliberately corrupted adjoint assembly
/// (an off-by-one in one coupling weight). Expected to fail, and each
/// failure is localized to the node where the defect acts.
pub fn run_adjoint_negative_control(seed: u64, sizes: &[usize]) -> Result<SuiteReport, MfgError> {
    run_adjoint_suite_inner(seed, sizes, true)
}

fn run_adjoint_suite_inner(
    seed: u64,
    sizes: &[usize],
    corrupt: bool,
) -> Result<SuiteReport, MfgError> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0;
    let mut passes = 0;
    let mut failures = Vec::new();
    for &n in sizes {
        let grid = PeriodicGrid1D::new(n)?;
        for _ in 0..ADJOINT_CASES_PER_SIZE {
            let case_seed: u64 = master.random();
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
            let b = random_smooth_field(grid, &mut rng, 0.5);
            let data = ProblemData1D::new(
                GridFunction1D::zeros(grid),
                b,
                Variant::Standard,
            )?;
            let u = random_smooth_field(grid, &mut rng, 1.0);
            let v = random_smooth_field(grid, &mut rng, 1.0);
            let w = random_smooth_field(grid, &mut rng, 1.0);

            let forward = linearize_apply(&u, &v, &data);
            let adjoint = if corrupt {
                corrupted_adjoint(&u, &w, &data)
            } else {
                adjoint_apply(&u, &w, &data)
            };
            let (lhs, s1) = pairing(&forward, &w);
            let (rhs, s2) = pairing(&v, &adjoint);
            let threshold = ADJOINT_TOL * (1.0 + s1 + s2);
            let value = (lhs - rhs).abs();
            cases += 1;
            if value <= threshold {
                passes += 1;
            } else {
                let located_index =
                    corrupt.then(|| locate_adjoint_defect(&u, &w, &adjoint, &data));
                failures.push(CaseFailure { size: n, case_seed, value, threshold, located_index });
            }
        }
    }
    let pass = failures.is_empty();
    Ok(SuiteReport {
        suite: if corrupt { "adjoint-negative-control" } else { "adjoint" }.into(),
        sizes: sizes.to_vec(),
        cases,
        passes,
        failures,
        pass,
        summary: None,
    })
}

/// Adjoint assembly with a seeded bug: the right-neighbor coupling weight
/// is applied to the center value. The identity check above must catch it.
fn corrupted_adjoint(
    u: &GridFunction1D,
    w: &GridFunction1D,
    data: &ProblemData1D,
) -> GridFunction1D {
    let n = data.grid().n();
    let inv_h = n as f64;
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    hamiltonian_grads(u.values(), data.b().values(), &mut dp, &mut dq);
    let mut out = vec![0.0; n];
    for k in 0..n {
        let prev = (k + n - 1) % n;
        let next = (k + 1) % n;
        out[k] = inv_h
            * (-dp[prev] * w.values()[prev] + (dp[k] + dq[k]) * w.values()[k]
                - dq[next] * w.values()[k]);
    }
    GridFunction1D::new(data.grid(), out).expect("assembly preserves the grid")
}

/// Rebuilds the true adjoint column by column from the forward operator
/// and reports the 1-based index where `candidate` deviates most.
fn locate_adjoint_defect(
    u: &GridFunction1D,
    w: &GridFunction1D,
    candidate: &GridFunction1D,
    data: &ProblemData1D,
) -> usize {
    let n = data.grid().n();
    let mut worst = (1, 0.0f64);
    for i in 1..=n {
        let mut basis = GridFunction1D::zeros(data.grid());
        basis.set(i, 1.0);
        let column = linearize_apply(u, &basis, data);
        let (truth, _) = pairing(&column, w);
        let dev = (candidate.get(i) - truth).abs();
        if dev > worst.1 {
            worst = (i, dev);
        }
    }
    worst.0
}

/// Checks the pairing gap of the coupled operator on random state pairs.
/// For the standard variant the gap must be nonnegative up to rounding;
/// for the congestion variant the observed distribution is reported
/// without an assertion.
pub fn run_monotonicity_suite(
    seed: u64,
    sizes: &[usize],
    variant: Variant,
) -> Result<SuiteReport, MfgError> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0;
    let mut passes = 0;
    let mut failures = Vec::new();
    let mut gaps: Vec<f64> = Vec::new();
    for &n in sizes {
        let grid = PeriodicGrid1D::new(n)?;
        for _ in 0..MONOTONICITY_CASES_PER_SIZE {
            let case_seed: u64 = master.random();
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
            let v = random_smooth_field(grid, &mut rng, 1.0);
            let b = match variant {
                Variant::Standard => random_smooth_field(grid, &mut rng, 0.5),
                Variant::Congestion => GridFunction1D::zeros(grid),
            };
            let data = ProblemData1D::new(v, b, variant)?;
            let m1 = random_positive_density(grid, &mut rng, 0.8);
            let u1 = random_smooth_field(grid, &mut rng, 1.0);
            let m2 = random_positive_density(grid, &mut rng, 0.8);
            let u2 = random_smooth_field(grid, &mut rng, 1.0);
            let (gap, scale) = monotonicity_gap_with_scale(&m1, &u1, &m2, &u2, &data)?;
            cases += 1;
            match variant {
                Variant::Standard => {
                    let threshold = -MONOTONICITY_TOL * scale;
                    if gap >= threshold {
                        passes += 1;
                    } else {
                        failures.push(CaseFailure {
                            size: n,
                            case_seed,
                            value: gap,
                            threshold,
                            located_index: None,
                        });
                    }
                }
                Variant::Congestion => {
                    gaps.push(gap);
                    passes += 1;
                }
            }
        }
    }
    let summary = match variant {
        Variant::Standard => None,
        Variant::Congestion => {
            gaps.sort_by(|a, b| a.total_cmp(b));
            let q = |p: f64| gaps[((gaps.len() - 1) as f64 * p).round() as usize];
            Some(serde_json::json!({
                "min_gap": gaps.first().copied().unwrap_or(0.0),
                "q05": q(0.05),
                "median": q(0.5),
                "negative_fraction":
                    gaps.iter().filter(|&&g| g < 0.0).count() as f64 / gaps.len() as f64,
            }))
        }
    };
    let pass = failures.is_empty();
    Ok(SuiteReport {
        suite: match variant {
            Variant::Standard => "monotonicity".into(),
            Variant::Congestion => "monotonicity-congestion".into(),
        },
        sizes: sizes.to_vec(),
        cases,
        passes,
        failures,
        pass,
        summary,
    })
}

/// Squared-distance history between two contracting-flow trajectories
/// started from different data on the same problem.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    pub squared_distances: Vec<f64>,
    /// Largest observed d/dt of the squared distance between records.
    pub max_growth_rate: f64,
    pub allowance: f64,
    pub pass: bool,
}

/// Runs the contracting flow from two initial pairs over the same record
/// grid and checks that their squared Euclidean distance never grows by
/// more than the allowance per unit time. Early residual stopping is
/// disabled so both runs share every record time.
pub fn run_contraction_test(
    data: &ProblemData1D,
    m0a: &GridFunction1D,
    u0a: &GridFunction1D,
    m0b: &GridFunction1D,
    u0b: &GridFunction1D,
    cfg: &FlowConfig,
) -> Result<ContractionReport, MfgError> {
    let mut cfg = *cfg;
    cfg.residual_stop = 0.0;

    let mut snaps_a: Vec<(f64, Vec<f64>)> = Vec::new();
    solve_monotonic_flow_with(data, m0a, u0a, &cfg, |t, m, u| {
        let mut y = m.to_vec();
        y.extend_from_slice(u);
        snaps_a.push((t, y));
    })?;
    let mut snaps_b: Vec<(f64, Vec<f64>)> = Vec::new();
    solve_monotonic_flow_with(data, m0b, u0b, &cfg, |t, m, u| {
        let mut y = m.to_vec();
        y.extend_from_slice(u);
        snaps_b.push((t, y));
    })?;
    if snaps_a.len() != snaps_b.len() {
        return Err(MfgError::InvariantViolation(format!(
            "record grids diverged: {} vs {} snapshots",
            snaps_a.len(),
            snaps_b.len()
        )));
    }

    let mut times = Vec::with_capacity(snaps_a.len());
    let mut squared_distances = Vec::with_capacity(snaps_a.len());
    for ((ta, ya), (tb, yb)) in snaps_a.iter().zip(&snaps_b) {
        if (ta - tb).abs() > 1e-12 * (1.0 + ta.abs()) {
            return Err(MfgError::InvariantViolation(format!(
                "record times diverged: {ta} vs {tb}"
            )));
        }
        let d2: f64 = ya.iter().zip(yb).map(|(a, b)| (a - b) * (a - b)).sum();
        times.push(*ta);
        squared_distances.push(d2);
    }

    let mut max_growth_rate = f64::NEG_INFINITY;
    let mut pass = true;
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        if dt <= 0.0 {
            continue;
        }
        let rate = (squared_distances[k] - squared_distances[k - 1]) / dt;
        max_growth_rate = max_growth_rate.max(rate);
        if rate > CONTRACTION_ALLOWANCE {
            pass = false;
        }
    }
    Ok(ContractionReport {
        times,
        squared_distances,
        max_growth_rate,
        allowance: CONTRACTION_ALLOWANCE,
        pass,
    })
}

/// Grid-refinement record: solved errors against the closed-form solution
/// at each size, with empirical orders between consecutive sizes.
#[derive(Clone, Debug, serde::Serialize)]
pub struct StudyResult {
    pub sizes: Vec<usize>,
    pub u_linf: Vec<f64>,
    pub m_linf: Vec<f64>,
    pub hbar_err: Vec<f64>,
    /// Nodal mean square of the solved value function at each size.
    pub mean_square_u: Vec<f64>,
    pub hbar_abs: Vec<f64>,
    /// log2 of consecutive density-error ratios.
    pub orders: Vec<f64>,
    pub pass: bool,
}

fn finish_study(
    sizes: &[usize],
    u_linf: Vec<f64>,
    m_linf: Vec<f64>,
    hbar_err: Vec<f64>,
    mean_square_u: Vec<f64>,
    hbar_abs: Vec<f64>,
) -> StudyResult {
    let orders: Vec<f64> =
        m_linf.windows(2).map(|p| (p[0] / p[1]).log2()).collect();
    let strictly_decreasing = m_linf.windows(2).all(|p| p[1] < p[0]);
    let at_floor = m_linf.iter().all(|&e| e <= REFINEMENT_ERROR_FLOOR);
    let bounded = mean_square_u.iter().all(|&x| x.is_finite() && x <= 10.0)
        && hbar_abs.iter().all(|&x| x.is_finite() && x <= 10.0);
    StudyResult {
        sizes: sizes.to_vec(),
        u_linf,
        m_linf,
        hbar_err,
        mean_square_u,
        hbar_abs,
        orders,
        pass: (strictly_decreasing || at_floor) && bounded,
    }
}

/// Refinement study for driftless problems, solved with the gradient flow
/// from the standard perturbed start 0.2 cos(2 pi x).
pub fn run_refinement_study_zero_drift(
    v: impl Fn(f64) -> f64 + Copy,
    sizes: &[usize],
    cfg: &FlowConfig,
) -> Result<StudyResult, MfgError> {
    let mut u_linf = Vec::new();
    let mut m_linf = Vec::new();
    let mut hbar_err = Vec::new();
    let mut mean_square_u = Vec::new();
    let mut hbar_abs = Vec::new();
    for &n in sizes {
        let data = ProblemData1D::from_fns(n, v, |_| 0.0, Variant::Standard)?;
        let u0 = GridFunction1D::from_fn(data.grid(), |x| {
            0.2 * (std::f64::consts::TAU * x).cos()
        })?;
        let (state, _) = solve_gradient_flow(&data, &u0, cfg)?;
        let exact = exact_zero_drift(n, v)?;
        let report = error_report(&state, &exact)?;
        u_linf.push(report.u_linf);
        m_linf.push(report.m_linf);
        hbar_err.push(report.hbar_err);
        mean_square_u.push(
            state.u().values().iter().map(|x| x * x).sum::<f64>() / n as f64,
        );
        hbar_abs.push(state.hbar().abs());
    }
    Ok(finish_study(sizes, u_linf, m_linf, hbar_err, mean_square_u, hbar_abs))
}

/// Refinement study for gradient drifts b = psi', solved with the gradient
/// flow from rest; the closed form is first-order accurate, so the density
/// error should shrink roughly linearly in h.
pub fn run_refinement_study_gradient_drift(
    v: impl Fn(f64) -> f64 + Copy,
    psi: impl Fn(f64) -> f64 + Copy,
    psi_prime: impl Fn(f64) -> f64 + Copy,
    sizes: &[usize],
    cfg: &FlowConfig,
) -> Result<StudyResult, MfgError> {
    let mut u_linf = Vec::new();
    let mut m_linf = Vec::new();
    let mut hbar_err = Vec::new();
    let mut mean_square_u = Vec::new();
    let mut hbar_abs = Vec::new();
    for &n in sizes {
        let data = ProblemData1D::from_fns(n, v, psi_prime, Variant::Standard)?;
        let u0 = GridFunction1D::zeros(data.grid());
        let (state, _) = solve_gradient_flow(&data, &u0, cfg)?;
        let exact = exact_gradient_drift(n, v, psi, psi_prime)?;
        let report = error_report(&state, &exact)?;
        u_linf.push(report.u_linf);
        m_linf.push(report.m_linf);
        hbar_err.push(report.hbar_err);
        mean_square_u.push(
            state.u().values().iter().map(|x| x * x).sum::<f64>() / n as f64,
        );
        hbar_abs.push(state.hbar().abs());
    }
    Ok(finish_study(sizes, u_linf, m_linf, hbar_err, mean_square_u, hbar_abs))
}

/// Energy-descent audit over a recorded trajectory: each sampled energy may
/// exceed its predecessor by at most ten times the local error allowance.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct EnergyAudit {
    pub checked: usize,
    pub violations: usize,
    /// Largest rise above the allowance; nonpositive when clean.
    pub worst_excess: f64,
    pub pass: bool,
}

pub fn run_energy_audit(traj: &Trajectory, rtol: f64, atol: f64) -> EnergyAudit {
    let mut checked = 0;
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    for pair in traj.samples.windows(2) {
        let allowance = 10.0 * (atol + rtol * pair[0].energy);
        let excess = pair[1].energy - pair[0].energy - allowance;
        checked += 1;
        worst_excess = worst_excess.max(excess);
        if excess > 0.0 {
            violations += 1;
        }
    }
    EnergyAudit {
        checked,
        violations,
        worst_excess: if checked == 0 { 0.0 } else { worst_excess },
        pass: violations == 0,
    }
}
