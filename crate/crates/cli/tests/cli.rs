use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn psiwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psiwalk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
  "scenario": "harmonic_ground",
  "trajectories": 300,
  "t_final": 0.2,
  "checkpoints": [0.1],
  "master_seed": 11
}"#;

#[test]
fn validate_fills_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"scenario": "free_packet"}"#);
    let out = psiwalk(&["validate", "--config", &cfg]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["scenario"], "free_packet");
    assert_eq!(v["guidance"]["lambda"], 20.0);
}

#[test]
fn validate_reports_every_issue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"scenario": "free_packet", "dt": 0.001, "dt_langevin": 0.01, "trajectories": 0}"#,
    );
    let out = psiwalk(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dt_langevin") && err.contains("dt ("), "{err}");
    assert!(err.contains("trajectories"), "{err}");
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let out_dir = dir.path().join("out");
    let out = psiwalk(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("manifest.json").exists());

    let rep = psiwalk(&["report", out_dir.to_str().unwrap()]);
    assert_eq!(rep.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&rep.stdout).contains("verified"));

    fs::write(out_dir.join("metrics.csv"), "metric,value\n").unwrap();
    let rep = psiwalk(&["report", out_dir.join("manifest.json").to_str().unwrap()]);
    assert_eq!(rep.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&rep.stdout).contains("MISMATCH metrics.csv"));
}

#[test]
fn threshold_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace(
        "\"master_seed\": 11",
        "\"master_seed\": 11, \"thresholds\": {\"tv_equilibrium_max\": 1e-6}",
    );
    let cfg = write_config(dir.path(), "c.json", &body);
    let out_dir = dir.path().join("out");
    let out = psiwalk(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL tv_equilibrium"));
    let rep = psiwalk(&["report", out_dir.to_str().unwrap()]);
    assert_eq!(rep.status.code(), Some(2));
}

#[test]
fn execution_errors_exit_with_one() {
    let out = psiwalk(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reading"));
}

#[test]
fn seed_and_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let run = |workers: &str, seed: &str, name: &str| {
        let d = dir.path().join(name);
        let out = psiwalk(&["run", "--config", &cfg, "--out", d.to_str().unwrap(), "--workers", workers, "--seed", seed]);
        assert!(out.status.code().is_some_and(|c| c != 1));
        d
    };
    let a = run("1", "5", "a");
    let b = run("8", "5", "b");
    let c = run("1", "6", "c");
    let metrics = |d: &Path| fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(metrics(&a), metrics(&b));
    assert_ne!(metrics(&a), metrics(&c));
    let mut ma: Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let mut mb: Value = serde_json::from_slice(&fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["config"]["master_seed"], 5);
    ma.as_object_mut().unwrap().remove("wall_clock_seconds");
    mb.as_object_mut().unwrap().remove("wall_clock_seconds");
    assert_eq!(ma, mb);
}

#[test]
fn half_runs_write_their_own_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let fp = dir.path().join("fp");
    let out = psiwalk(&["fp-only", "--config", &cfg, "--out", fp.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(fp.join("oracle.csv").exists());
    assert!(!fp.join("residuals.csv").exists());
    let ens = dir.path().join("ens");
    let out = psiwalk(&["ensemble-only", "--config", &cfg, "--out", ens.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(ens.join("residuals.csv").exists());
    assert!(!ens.join("oracle.csv").exists());
}

#[test]
fn defaults_lists_every_scenario() {
    let out = psiwalk(&["defaults"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_object().unwrap().len(), 6);
    let out = psiwalk(&["defaults", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("double_well"));
}
