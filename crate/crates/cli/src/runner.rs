//! Orchestration: solves, refinement studies and operator self-checks,
//! with CSV / JSON / gnuplot-block output emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mfg_core::diagnostics::{random_positive_density, random_smooth_field};
use mfg_core::{
    error_report, error_report_2d, residual, residual_2d, run_adjoint_suite, run_contraction_test,
    run_monotonicity_suite, solve_gradient_flow_with, solve_monotonic_flow_2d_with,
    solve_monotonic_flow_with, FlowConfig, MfgState, MfgState2D, ProblemData1D, Residual,
    StopReason, Trajectory, Variant,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{Built, FlowName, RunSpec};
use crate::CliError;

/// All numbers in CSV and gnuplot outputs use 17 significant digits, which
/// round-trips every binary double exactly.
fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("cannot write {}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn stop_name(stop: StopReason) -> &'static str {
    match stop {
        StopReason::ResidualConverged => "residual_converged",
        StopReason::TimeLimit => "time_limit",
        StopReason::MaxSteps => "max_steps",
    }
}

fn residual_json(r: &Residual) -> serde_json::Value {
    json!({
        "hj_l2": r.hj_l2,
        "hj_linf": r.hj_linf,
        "fp_l2": r.fp_l2,
        "fp_linf": r.fp_linf,
        "max": r.max(),
    })
}

/// Output directory: the --output flag wins over the config's output_dir,
/// which defaults to the working directory.
fn resolve_dir(spec_dir: Option<&Path>, cli_dir: Option<&Path>) -> PathBuf {
    cli_dir
        .map(Path::to_path_buf)
        .or_else(|| spec_dir.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn trajectory_csv(traj: &Trajectory, nodes: usize) -> String {
    let mut out = String::from("t,phi,residual_linf,mass,mean_u,hbar\n");
    for s in &traj.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt17(s.t),
            fmt17(s.energy),
            fmt17(s.residual),
            fmt17(s.mass),
            fmt17(s.u_sum / nodes as f64),
            fmt17(s.hbar),
        ));
    }
    out
}

/// Record-time density snapshots as gnuplot data: one indexed block per
/// record time, blocks separated by two blank lines.
fn snapshots_1d(snaps: &[(f64, Vec<f64>)], n: usize) -> String {
    let mut out = String::new();
    for (t, m) in snaps {
        out.push_str(&format!("# t = {}\n", fmt17(*t)));
        for (i, v) in m.iter().enumerate() {
            out.push_str(&format!("{} {}\n", fmt17((i + 1) as f64 / n as f64), fmt17(*v)));
        }
        out.push_str("\n\n");
    }
    out
}

/// 2-D snapshots: per record time, one scanline per y value separated by
/// single blank lines (splot/pm3d layout), record times separated by two.
fn snapshots_2d(snaps: &[(f64, Vec<f64>)], n: usize) -> String {
    let mut out = String::new();
    for (t, theta) in snaps {
        out.push_str(&format!("# t = {}\n", fmt17(*t)));
        for j in 1..=n {
            for i in 1..=n {
                let v = theta[(j - 1) * n + (i - 1)];
                out.push_str(&format!(
                    "{} {} {}\n",
                    fmt17(i as f64 / n as f64),
                    fmt17(j as f64 / n as f64),
                    fmt17(v)
                ));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

fn final_state_1d(state: &MfgState, oracle: Option<&mfg_core::ExactSolution>) -> String {
    let n = state.u().grid().n();
    let mut out = String::new();
    match oracle {
        None => {
            out.push_str("x,u,m\n");
            for i in 1..=n {
                out.push_str(&format!(
                    "{},{},{}\n",
                    fmt17(i as f64 / n as f64),
                    fmt17(state.u().get(i)),
                    fmt17(state.m().get(i)),
                ));
            }
        }
        Some(sol) => {
            out.push_str("x,u,m,u_exact,m_exact,u_err,m_err\n");
            for i in 1..=n {
                let (u, m) = (state.u().get(i), state.m().get(i));
                let (ue, me) = (sol.u.get(i), sol.m.get(i));
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    fmt17(i as f64 / n as f64),
                    fmt17(u),
                    fmt17(m),
                    fmt17(ue),
                    fmt17(me),
                    fmt17(u - ue),
                    fmt17(m - me),
                ));
            }
        }
    }
    out
}

fn final_state_2d(state: &MfgState2D, oracle: Option<&mfg_core::ExactSolution2D>) -> String {
    let n = state.w().grid().n();
    let mut out = String::new();
    let header = match oracle {
        None => "x,y,u,m\n",
        Some(_) => "x,y,u,m,u_exact,m_exact,u_err,m_err\n",
    };
    out.push_str(header);
    for j in 1..=n {
        for i in 1..=n {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            let (w, theta) = (state.w().get(i, j), state.theta().get(i, j));
            match oracle {
                None => out.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt17(x),
                    fmt17(y),
                    fmt17(w),
                    fmt17(theta)
                )),
                Some(sol) => {
                    let (we, te) = (sol.w.get(i, j), sol.theta.get(i, j));
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        fmt17(x),
                        fmt17(y),
                        fmt17(w),
                        fmt17(theta),
                        fmt17(we),
                        fmt17(te),
                        fmt17(w - we),
                        fmt17(theta - te),
                    ));
                }
            }
        }
    }
    out
}

fn error_json(r: &mfg_core::ErrorReport) -> serde_json::Value {
    json!({
        "u_l2": r.u_l2,
        "u_linf": r.u_linf,
        "m_l2": r.m_l2,
        "m_linf": r.m_linf,
        "hbar_err": r.hbar_err,
    })
}

/// Runs one solve and writes trajectory.csv, final_state.csv, report.json
/// and snapshots.dat into the output directory.
pub fn solve(spec: &RunSpec, cli_dir: Option<&Path>, quiet: bool) -> Result<(), CliError> {
    let built = spec.build()?;
    let cfg = spec.flow_config();
    let dir = resolve_dir(spec.output_dir.as_deref(), cli_dir);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;

    let mut snapshots: Vec<(f64, Vec<f64>)> = Vec::new();
    let record = |t: f64, density: &[f64], _value: &[f64]| {
        snapshots.push((t, density.to_vec()));
    };

    let started = Instant::now();
    match built {
        Built::OneD { data, u0, m0, oracle } => {
            let (state, traj) = match spec.flow {
                FlowName::Gradient => solve_gradient_flow_with(&data, &u0, &cfg, record),
                FlowName::Monotone => {
                    let m0 = m0.expect("validated: monotone flow has m0");
                    solve_monotonic_flow_with(&data, &m0, &u0, &cfg, record)
                }
            }
            .map_err(CliError::numerical_from_core)?;
            let wall = started.elapsed().as_secs_f64();
            let n = data.grid().n();

            write_text(&dir.join("trajectory.csv"), &trajectory_csv(&traj, n))?;
            write_text(&dir.join("final_state.csv"), &final_state_1d(&state, oracle.as_ref()))?;
            write_text(&dir.join("snapshots.dat"), &snapshots_1d(&snapshots, n))?;

            let res = residual(&state, &data).map_err(CliError::numerical_from_core)?;
            let errors = oracle
                .as_ref()
                .map(|sol| error_report(&state, sol).map_err(CliError::numerical_from_core))
                .transpose()?;
            finish(spec, &dir, &traj, state.hbar(), &res, errors.as_ref(), wall, quiet)
        }
        Built::TwoD { data, w0, theta0, oracle } => {
            let theta0 = theta0.ok_or_else(|| {
                CliError::Config(
                    "the monotone flow requires the field m0 (initial density expression)".into(),
                )
            })?;
            let (state, traj) = solve_monotonic_flow_2d_with(&data, &theta0, &w0, &cfg, record)
                .map_err(CliError::numerical_from_core)?;
            let wall = started.elapsed().as_secs_f64();
            let n = data.grid().n();

            write_text(&dir.join("trajectory.csv"), &trajectory_csv(&traj, n * n))?;
            write_text(&dir.join("final_state.csv"), &final_state_2d(&state, oracle.as_ref()))?;
            write_text(&dir.join("snapshots.dat"), &snapshots_2d(&snapshots, n))?;

            let res = residual_2d(&state, &data).map_err(CliError::numerical_from_core)?;
            let errors = oracle
                .as_ref()
                .map(|sol| error_report_2d(&state, sol).map_err(CliError::numerical_from_core))
                .transpose()?;
            finish(spec, &dir, &traj, state.hbar(), &res, errors.as_ref(), wall, quiet)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    spec: &RunSpec,
    dir: &Path,
    traj: &Trajectory,
    hbar: f64,
    res: &Residual,
    errors: Option<&mfg_core::ErrorReport>,
    wall: f64,
    quiet: bool,
) -> Result<(), CliError> {
    let last = traj.final_sample();
    let mut report = json!({
        "spec": spec,
        "outcome": {
            "stop": stop_name(traj.stop),
            "t_final": last.t,
            "hbar": hbar,
            "mass": last.mass,
            "final_residual": residual_json(res),
            "wall_seconds": wall,
            "stats": {
                "steps_accepted": traj.stats.steps_accepted,
                "steps_rejected": traj.stats.steps_rejected,
                "rhs_evals": traj.stats.rhs_evals,
                "newton_iters": traj.stats.newton_iters,
                "final_dt": traj.stats.final_dt,
            },
        },
    });
    if let Some(e) = errors {
        report["errors"] = error_json(e);
    }
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&path, &text)?;

    if !quiet {
        println!(
            "solve: stop={} t={} hbar={:.6} residual_max={:.3e} wall={:.2}s -> {}",
            stop_name(traj.stop),
            last.t,
            hbar,
            res.max(),
            wall,
            dir.display()
        );
        if let Some(e) = errors {
            println!(
                "errors vs exact: u_linf={:.3e} m_linf={:.3e} hbar_err={:.3e}",
                e.u_linf, e.m_linf, e.hbar_err
            );
        }
    }
    if traj.stop == StopReason::MaxSteps {
        return Err(CliError::Numerical(format!(
            "step budget exhausted at t = {} before t_max = {}; loosen rtol/atol (kinked problems need rtol around 1e-4) or raise max_steps",
            last.t, spec.t_max
        )));
    }
    Ok(())
}

/// Re-solves the config on a ladder of grid sizes and reports errors
/// against the closed-form solution, with observed convergence orders.
pub fn study_refinement(
    spec: &RunSpec,
    sizes: &[usize],
    cli_dir: Option<&Path>,
    quiet: bool,
) -> Result<(), CliError> {
    if sizes.is_empty() {
        return Err(CliError::Config("the refinement study needs at least one size".into()));
    }
    let dir = resolve_dir(spec.output_dir.as_deref(), cli_dir);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;

    let mut rows = Vec::new();
    for &n in sizes {
        let mut per_size = spec.clone();
        per_size.n = n;
        per_size.compare_exact = true;
        let built = per_size.build()?;
        let cfg = per_size.flow_config();
        let started = Instant::now();
        let (err, stop) = match built {
            Built::OneD { data, u0, m0, oracle } => {
                let (state, traj) = match per_size.flow {
                    FlowName::Gradient => {
                        solve_gradient_flow_with(&data, &u0, &cfg, |_, _, _| ())
                    }
                    FlowName::Monotone => {
                        let m0 = m0.expect("validated: monotone flow has m0");
                        solve_monotonic_flow_with(&data, &m0, &u0, &cfg, |_, _, _| ())
                    }
                }
                .map_err(CliError::numerical_from_core)?;
                let sol = oracle.expect("compare_exact was forced on");
                (
                    error_report(&state, &sol).map_err(CliError::numerical_from_core)?,
                    traj.stop,
                )
            }
            Built::TwoD { data, w0, theta0, oracle } => {
                let theta0 = theta0.ok_or_else(|| {
                    CliError::Config(
                        "the monotone flow requires the field m0 (initial density expression)"
                            .into(),
                    )
                })?;
                let (state, traj) =
                    solve_monotonic_flow_2d_with(&data, &theta0, &w0, &cfg, |_, _, _| ())
                        .map_err(CliError::numerical_from_core)?;
                let sol = oracle.expect("compare_exact was forced on");
                (
                    error_report_2d(&state, &sol).map_err(CliError::numerical_from_core)?,
                    traj.stop,
                )
            }
        };
        let wall = started.elapsed().as_secs_f64();
        if !quiet {
            println!(
                "n={n}: u_linf={:.3e} m_linf={:.3e} hbar_err={:.3e} ({}, {:.2}s)",
                err.u_linf,
                err.m_linf,
                err.hbar_err,
                stop_name(stop),
                wall
            );
        }
        rows.push((n, err, stop, wall));
    }

    let mut csv = String::from("n,u_l2,u_linf,m_l2,m_linf,hbar_err\n");
    for (n, e, _, _) in &rows {
        csv.push_str(&format!(
            "{n},{},{},{},{},{}\n",
            fmt17(e.u_l2),
            fmt17(e.u_linf),
            fmt17(e.m_l2),
            fmt17(e.m_linf),
            fmt17(e.hbar_err)
        ));
    }
    write_text(&dir.join("study.csv"), &csv)?;

    let orders = |pick: fn(&mfg_core::ErrorReport) -> f64| -> Vec<f64> {
        rows.windows(2)
            .map(|w| (pick(&w[0].1) / pick(&w[1].1)).log2())
            .collect()
    };
    let report = json!({
        "spec": spec,
        "sizes": sizes,
        "results": rows.iter().map(|(n, e, stop, wall)| json!({
            "n": n,
            "errors": error_json(e),
            "stop": stop_name(*stop),
            "wall_seconds": wall,
        })).collect::<Vec<_>>(),
        "observed_orders": {
            "u_linf": orders(|e| e.u_linf),
            "m_linf": orders(|e| e.m_linf),
        },
    });
    write_text(
        &dir.join("study.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    if !quiet {
        println!("study: wrote {}", dir.join("study.csv").display());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Adjoint,
    Monotonicity,
    Contraction,
}

/// Operator self-checks on random data. Exit code 2 when a check fails.
pub fn check(
    kind: CheckKind,
    seed: u64,
    sizes: &[usize],
    cli_dir: Option<&Path>,
    quiet: bool,
) -> Result<(), CliError> {
    let (name, report, pass) = match kind {
        CheckKind::Adjoint => {
            let sizes = if sizes.is_empty() { vec![4, 16, 64] } else { sizes.to_vec() };
            let rep = run_adjoint_suite(seed, &sizes).map_err(CliError::numerical_from_core)?;
            if !quiet {
                println!(
                    "adjoint identity: {}/{} random triples pass (sizes {:?}, seed {seed})",
                    rep.passes, rep.cases, sizes
                );
            }
            let pass = rep.pass;
            ("adjoint", serde_json::to_value(&rep).expect("report serializes"), pass)
        }
        CheckKind::Monotonicity => {
            let sizes = if sizes.is_empty() { vec![4, 8, 16] } else { sizes.to_vec() };
            let std_rep = run_monotonicity_suite(seed, &sizes, Variant::Standard)
                .map_err(CliError::numerical_from_core)?;
            let cong_rep = run_monotonicity_suite(seed, &sizes, Variant::Congestion)
                .map_err(CliError::numerical_from_core)?;
            if !quiet {
                println!(
                    "monotonicity (standard): {}/{} random pairs pass (sizes {:?}, seed {seed})",
                    std_rep.passes, std_rep.cases, sizes
                );
                println!(
                    "monotonicity (congestion): {}/{} random pairs pass",
                    cong_rep.passes, cong_rep.cases
                );
            }
            let pass = std_rep.pass && cong_rep.pass;
            (
                "monotonicity",
                json!({"standard": std_rep, "congestion": cong_rep}),
                pass,
            )
        }
        CheckKind::Contraction => {
            let sizes = if sizes.is_empty() { vec![50] } else { sizes.to_vec() };
            let mut reports = Vec::new();
            let mut all_pass = true;
            for &n in &sizes {
                let data = ProblemData1D::from_fns(
                    n,
                    |x| (std::f64::consts::TAU * x).sin(),
                    |_| 0.0,
                    Variant::Standard,
                )
                .map_err(CliError::config_from_core)?;
                let grid = data.grid();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m0a = random_positive_density(grid, &mut rng, 0.5);
                let u0a = random_smooth_field(grid, &mut rng, 0.5);
                let m0b = random_positive_density(grid, &mut rng, 0.5);
                let u0b = random_smooth_field(grid, &mut rng, 0.5);
                let mut cfg = FlowConfig::new(5.0);
                cfg.record_every = 0.25;
                // Loose tolerances: random starts cross upwind kinks, where
                // tight step control crawls; the bound itself is exact.
                cfg.rtol = 1e-4;
                cfg.atol = 1e-6;
                let rep = run_contraction_test(&data, &m0a, &u0a, &m0b, &u0b, &cfg)
                    .map_err(CliError::numerical_from_core)?;
                if !quiet {
                    println!(
                        "contraction n={n}: squared distance {:.3e} -> {:.3e}, max growth rate {:.2e} ({})",
                        rep.squared_distances.first().unwrap(),
                        rep.squared_distances.last().unwrap(),
                        rep.max_growth_rate,
                        if rep.pass { "pass" } else { "FAIL" }
                    );
                }
                all_pass &= rep.pass;
                reports.push(json!({"n": n, "report": rep}));
            }
            ("contraction", serde_json::Value::Array(reports), all_pass)
        }
    };

    if let Some(dir) = cli_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(format!("check_{name}.json"));
        write_text(&path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
        if !quiet {
            println!("check: wrote {}", path.display());
        }
    }
    if pass {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("{name} check failed")))
    }
}
