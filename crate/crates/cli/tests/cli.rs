//! End-to-end tests of the `mfg` binary: spawn it on real configs in
//! temporary directories and inspect exit codes and output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mfg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfg"))
}

fn run(args: &[&str]) -> Output {
    mfg().args(args).output().expect("binary spawns")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn report_of(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn bundled_gradient_config_recovers_the_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "solve",
        repo_config("gradient_1d.json").to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let report = report_of(&out_dir);
    let m_linf = report["errors"]["m_linf"].as_f64().unwrap();
    assert!(m_linf <= 5e-3, "density error {m_linf} above 5e-3");
    assert_eq!(report["outcome"]["stop"], "time_limit");
    assert!(report["outcome"]["stats"]["steps_accepted"].as_u64().unwrap() > 0);

    let final_state = fs::read_to_string(out_dir.join("final_state.csv")).unwrap();
    assert!(final_state.starts_with("x,u,m,u_exact,m_exact,u_err,m_err\n"));
    assert_eq!(final_state.lines().count(), 101);

    // t_max = 1 sampled every 0.05: 21 records plus the header.
    let trajectory = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert!(trajectory.starts_with("t,phi,residual_linf,mass,mean_u,hbar\n"));
    assert_eq!(trajectory.lines().count(), 22);

    // Snapshot blocks are separated by double blank lines, one per record.
    let snapshots = fs::read_to_string(out_dir.join("snapshots.dat")).unwrap();
    assert_eq!(snapshots.matches("# t = ").count(), 21);
}

#[test]
fn identical_runs_produce_byte_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "run.json",
        r#"{"n": 24, "flow": "monotone", "t_max": 1.0, "V": "sin(2*pi*x)",
            "u0": "0.2*cos(2*pi*x)", "m0": "1+0.2*cos(2*pi*x)",
            "rtol": 1e-6, "atol": 1e-8, "record_every": 0.25,
            "compare_exact": true}"#,
    );
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for dir in &dirs {
        let out = run(&[
            "solve",
            config.to_str().unwrap(),
            "--output",
            dir.to_str().unwrap(),
            "--quiet",
        ]);
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    }
    for file in ["trajectory.csv", "final_state.csv", "snapshots.dat"] {
        let a = fs::read(dirs[0].join(file)).unwrap();
        let b = fs::read(dirs[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn unwritable_output_dir_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "run.json",
        r#"{"n": 8, "flow": "gradient", "t_max": 0.1, "V": "sin(2*pi*x)"}"#,
    );
    // A path through a regular file can never become a directory.
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, b"file").unwrap();
    let out = run(&[
        "solve",
        config.to_str().unwrap(),
        "--output",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_of(&out));
}

#[test]
fn missing_config_file_exits_3() {
    let out = run(&["solve", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_of(&out));
}

#[test]
fn missing_m0_for_monotone_exits_1_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "run.json",
        r#"{"n": 8, "flow": "monotone", "t_max": 0.1, "V": "sin(2*pi*x)"}"#,
    );
    let out = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("m0"), "stderr: {}", stderr_of(&out));
}

#[test]
fn unknown_config_key_exits_1_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "run.json",
        r#"{"n": 8, "flow": "gradient", "t_max": 0.1, "V": "0", "rtoll": 1e-6}"#,
    );
    let out = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("rtoll"), "stderr: {}", stderr_of(&out));
}

#[test]
fn expression_syntax_error_reports_byte_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "run.json",
        r#"{"n": 8, "flow": "gradient", "t_max": 0.1, "V": "2*+3"}"#,
    );
    let out = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("byte 2"), "stderr: {}", stderr_of(&out));
}

#[test]
fn drift_run_reports_no_exact_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "run.json",
        r#"{"n": 24, "flow": "monotone", "t_max": 3.0, "V": "sin(2*pi*x)",
            "b": "cos(2*pi*x)^2", "u0": "0.2*cos(2*pi*x)", "m0": "1+0.2*cos(2*pi*x)",
            "rtol": 1e-4, "atol": 1e-6, "record_every": 0.5}"#,
    );
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "solve",
        config.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let final_state = fs::read_to_string(out_dir.join("final_state.csv")).unwrap();
    assert!(final_state.starts_with("x,u,m\n"), "unexpected header");
    let report = report_of(&out_dir);
    assert!(report.get("errors").is_none());
    assert!(report["outcome"]["final_residual"]["max"].as_f64().unwrap().is_finite());
}

#[test]
fn two_d_solve_writes_exact_columns_and_scanline_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "run.json",
        r#"{"dimension": 2, "n": 8, "flow": "monotone", "t_max": 2.0,
            "W": "sin(2*pi*x)+sin(2*pi*y)", "u0": "0.1*cos(2*pi*x)",
            "m0": "1+0.1*cos(2*pi*y)", "rtol": 1e-6, "atol": 1e-8,
            "record_every": 1.0, "compare_exact": true}"#,
    );
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "solve",
        config.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let final_state = fs::read_to_string(out_dir.join("final_state.csv")).unwrap();
    assert!(final_state.starts_with("x,y,u,m,u_exact,m_exact,u_err,m_err\n"));
    assert_eq!(final_state.lines().count(), 65);
    let report = report_of(&out_dir);
    assert!(report["errors"]["m_linf"].as_f64().unwrap().is_finite());
    // 3 record times (t = 0, 1, 2), each with 8 scanlines of 8 nodes.
    let snapshots = fs::read_to_string(out_dir.join("snapshots.dat")).unwrap();
    assert_eq!(snapshots.matches("# t = ").count(), 3);
}

#[test]
fn checks_pass_and_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["check", "adjoint", "--seed", "7", "--sizes", "4,8"]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let out = run(&["check", "monotonicity", "--sizes", "4,8", "--quiet"]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let out = run(&[
        "check",
        "contraction",
        "--sizes",
        "16",
        "--output",
        tmp.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = fs::read_to_string(tmp.path().join("check_contraction.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report[0]["report"]["pass"], true);
}

#[test]
fn refinement_study_writes_merged_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "run.json",
        r#"{"n": 16, "flow": "gradient", "t_max": 1.5, "V": "sin(2*pi*x)",
            "u0": "0.2*cos(2*pi*x)", "rtol": 1e-6, "atol": 1e-8}"#,
    );
    let out_dir = tmp.path().join("study");
    let out = run(&[
        "study",
        "refinement",
        config.to_str().unwrap(),
        "--sizes",
        "16,32",
        "--output",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let csv = fs::read_to_string(out_dir.join("study.csv")).unwrap();
    assert!(csv.starts_with("n,u_l2,u_linf,m_l2,m_linf,hbar_err\n"));
    assert_eq!(csv.lines().count(), 3);
    let text = fs::read_to_string(out_dir.join("study.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let orders = report["observed_orders"]["m_linf"].as_array().unwrap();
    assert_eq!(orders.len(), 1);
}
