use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldkalman")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn steady_state_succeeds_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["steady-state", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("closed-loop spectral radius"));
    assert!(out.join("steadystate.csv").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn zero_gamma_is_a_detectability_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"scenario": {"gamma_scale": 0.0}}"#);
    let out = dir.path().join("out");
    let o = run(&["steady-state", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Assumption 7"));
}

#[test]
fn zero_gamma_validates_with_zero_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"scenario": {"gamma_scale": 0.0, "horizon": 5}}"#);
    let out = dir.path().join("out");
    let o = run(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("validation.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let residual = line.split(',').nth(1).unwrap();
        assert_eq!(residual.parse::<f64>().unwrap(), 0.0, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 4);
}

#[test]
fn perturbed_gain_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"validate": {"gain_perturbation": 0.1}}"#);
    let out = dir.path().join("out");
    let o = run(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    let optimality = text.lines().find(|l| l.contains("optimality_condition")).unwrap();
    assert!(optimality.starts_with("FAIL"), "{text}");
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    for json in [r#"{"scenario": {"nu": -1.0}}"#, r#"{"scenario": {"no_such_key": 1}}"#, "{"] {
        let cfg = write_config(dir.path(), json);
        let o = run(&["steady-state", "--config", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{json}");
    }
    let o = run(&["simulate", "--config", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_and_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"scenario": {"horizon": 4, "trials": 500}}"#);
    let out = dir.path().join("out");
    let o = run(&[
        "simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9", "--trials", "6", "--threads", "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["scenario"]["trials"], 6);
    let mse = fs::read_to_string(out.join("mse.csv")).unwrap();
    assert_eq!(mse.lines().count(), 1 + 5);
}

#[test]
fn plot_script_names_its_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["plot-script", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let path = String::from_utf8_lossy(&o.stdout).trim().to_string();
    let script = fs::read_to_string(path).unwrap();
    assert!(script.contains("mse.csv") && script.contains("trajectory.csv"));
}
