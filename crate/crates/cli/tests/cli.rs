use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frontier-mm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FRONTIER_MM_SEED")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bound_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["bound", "--mu2", "1", "--mu3", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("bound_report.json"));
    let lb = report["lb_skew"].as_f64().unwrap();
    assert!((lb - (2f64.sqrt() - 1.0)).abs() < 1e-15);
    assert!(dir.path().join("config_echo.json").exists());
}

#[test]
fn nonpositive_variance_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["bound", "--mu2", "0", "--mu3", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn feasibility_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    run(&["check-feasibility", "--moments", "1,2,6,24,120"], dir.path());
    assert_eq!(json(&dir.path().join("feasibility.json"))["feasible"], Value::Bool(true));
    run(&["check-feasibility", "--moments", "0,1,3"], dir.path());
    assert_eq!(json(&dir.path().join("feasibility.json"))["feasible"], Value::Bool(false));
}

#[test]
fn fit_dist_recovers_beta_and_respects_constraint() {
    let dir = tempfile::tempdir().unwrap();
    // 4·Beta(2, 2): μ2 = 0.8, μ3 = 0, μ4 = 48/35
    let mu4 = (48.0f64 / 35.0).to_string();
    let out = run(&["fit-dist", "--mu2", "0.8", "--mu3", "0", "--mu4", &mu4, "--n-eff", "250", "--c", "inf"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let fit = json(&dir.path().join("fit.json"));
    assert!((fit["implied_mean"].as_f64().unwrap() - 2.0).abs() < 1e-4);

    let out = run(&["fit-dist", "--mu2", "0.8", "--mu3", "0", "--mu4", &mu4, "--n-eff", "25", "--c", "0.05"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let fit = json(&dir.path().join("fit.json"));
    let mass = fit["constraint_mass"].as_f64().unwrap();
    assert!(mass >= 0.04 - 1e-8, "mass {mass}");
    assert_eq!(fit["bind"], Value::Bool(true));
}

#[test]
fn malformed_panel_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "firm,period,y,x\n1,1,abc,2\n").unwrap();
    let out = run(&["estimate", "--input", csv.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("abc"));

    let out = run(&["estimate", "--input", dir.path().join("missing.csv").to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_then_estimate_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let out = run(
        &["simulate", "--reps", "3", "--n", "200", "--reference-draws", "20000", "--seed", "4", "--write-panel"],
        &sim,
    );
    assert!(out.status.code().is_some_and(|c| c <= 1));
    let metrics = std::fs::read_to_string(sim.join("metrics.csv")).unwrap();
    assert!(metrics.lines().next().unwrap().starts_with("region,"));
    let grid = std::fs::read_to_string(sim.join("grid.csv")).unwrap();
    // 4 designs × 3 estimators plus the header
    assert_eq!(grid.lines().count(), 13);

    let est = dir.path().join("est");
    let panel = sim.join("panel.csv");
    let out = run(&["estimate", "--input", panel.to_str().unwrap(), "--seed", "1"], &est);
    assert!(out.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&out.stderr));
    let frontier = std::fs::read_to_string(est.join("frontier.csv")).unwrap();
    assert_eq!(frontier.lines().count(), 200 * 8 + 1);
    let moments = json(&est.join("moments.json"));
    assert!(moments["pooled"]["mu2_u"].as_f64().unwrap() > 0.0);
    assert!(est.join("fits.json").exists());
}

#[test]
fn seed_precedence_flag_over_env_over_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = |sub: &str| json(&dir.path().join(sub).join("config_echo.json"))["seed"].clone();
    let base = ["check-feasibility", "--moments", "1,2"];

    run(&base, &dir.path().join("default"));
    assert_eq!(cfg("default"), Value::from(0));

    let out = Command::new(env!("CARGO_BIN_EXE_frontier-mm"))
        .args(base)
        .arg("--out")
        .arg(dir.path().join("env"))
        .env("FRONTIER_MM_SEED", "17")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(cfg("env"), Value::from(17));

    let out = Command::new(env!("CARGO_BIN_EXE_frontier-mm"))
        .args(base)
        .args(["--seed", "3", "--out"])
        .arg(dir.path().join("flag"))
        .env("FRONTIER_MM_SEED", "17")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(cfg("flag"), Value::from(3));
}

#[test]
fn config_file_fields_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"seed": 8, "bound": {"mu2": 4.0, "mu3": 0.0}}"#).unwrap();
    let out = run(&["--config", path.to_str().unwrap(), "bound"], &dir.path().join("a"));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("a/bound_report.json"))["lb_skew"].as_f64(), Some(2.0));
    assert_eq!(json(&dir.path().join("a/config_echo.json"))["seed"], Value::from(8));

    let out = run(&["--config", path.to_str().unwrap(), "bound", "--mu2", "9"], &dir.path().join("b"));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("b/bound_report.json"))["lb_skew"].as_f64(), Some(3.0));
}
