use std::fs;
use std::path::{Path, PathBuf};

use pfcontrol::cli::{run, EXIT_CHECK, EXIT_CONFIG, EXIT_OK};
use tempfile::TempDir;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("pfcontrol").chain(args.iter().copied()))
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gradcheck_passes_on_the_desk_problem() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = config_path("desk_logarithmic.json");
    assert_eq!(cli(&["gradcheck", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_OK);
    let report = json(out.join("gradcheck.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["fd_tolerance"], 1e-6);
    assert!(report["config_digest"].as_str().unwrap().len() == 64);
    assert!(out.join("effective_config.json").exists());
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(cli(&["bogus"]), EXIT_CONFIG);
    assert_eq!(cli(&["solve"]), EXIT_CONFIG);
    assert_eq!(cli(&["--help"]), EXIT_OK);
}

#[test]
fn invalid_configs_exit_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(cli(&["solve", "--config", missing.to_str().unwrap(), "--out", out]), EXIT_CONFIG);
    for text in [
        "{ not json",
        r#"{"grid": {"cells": [16], "bogus": 1}}"#,
        r#"{"box": {"u_min": 1.0, "u_max": -1.0}}"#,
        r#"{"potential": {"kind": "logarithmic"}, "physics": {"tau": 0.0}}"#,
        r#"{"time": {"horizon": -1.0, "steps": 4}}"#,
    ] {
        let cfg = write_config(tmp.path(), text);
        assert_eq!(cli(&["solve", "--config", cfg.to_str().unwrap(), "--out", out]), EXIT_CONFIG, "{text}");
    }
    let cfg = config_path("desk_regular.json");
    assert_eq!(cli(&["probe", "nope", "--config", cfg.to_str().unwrap(), "--out", out]), EXIT_CONFIG);
}

#[test]
fn zero_weights_stop_immediately() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{"cost": {"kappa": [0, 0, 0, 0]}, "control": {"u0": 0.25}}"#);
    assert_eq!(cli(&["optimize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_OK);
    let report = json(out.join("optimize_report.json"));
    assert_eq!(report["iterations"], 0);
    assert_eq!(report["final_cost"], 0.0);
    assert_eq!(report["termination"], "converged");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_path("desk_logarithmic.json");
    let mut dirs = Vec::new();
    for run_id in 0..2 {
        let out = tmp.path().join(format!("run{run_id}"));
        for cmd in ["solve", "tangent", "adjoint"] {
            assert_eq!(cli(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_OK);
        }
        assert_eq!(
            cli(&["probe", "frechet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]),
            EXIT_OK
        );
        dirs.push(out);
    }
    let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 20);
    for name in names {
        assert_eq!(
            fs::read(dirs[0].join(&name)).unwrap(),
            fs::read(dirs[1].join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
}

#[test]
fn seed_override_changes_the_digest() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_path("desk_regular.json");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(cli(&["tangent", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]), EXIT_OK);
    assert_eq!(
        cli(&["tangent", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "99"]),
        EXIT_OK
    );
    let (sa, sb) = (json(a.join("summary.json")), json(b.join("summary.json")));
    assert_ne!(sa["config_digest"], sb["config_digest"]);
    assert_ne!(sa["cost_derivative"], sb["cost_derivative"]);
    assert_eq!(json(b.join("effective_config.json"))["seed"], 99);
}

#[test]
fn failing_check_exits_with_check_code() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{"gradcheck": {"directions": 2, "duality_tolerance": 0.0}, "control": {"u0": 0.3}}"#);
    assert_eq!(cli(&["gradcheck", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_CHECK);
    assert_eq!(json(out.join("gradcheck.json"))["passed"], false);
}
