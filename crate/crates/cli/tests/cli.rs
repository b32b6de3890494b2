use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tensornet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tensornet"))
        .current_dir(dir)
        .env_remove("TENSORNET_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn coeff_rows(csv: &str) -> Vec<f64> {
    csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with('k')).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn hermite_of_x_plus_x_cubed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(tmp.path(), &["hermite", "--poly", "0,1,0,1", "--K", "6", "--out", "h"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let c = coeff_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(c.len(), 7);
    assert!((c[1] - 4.0).abs() < 1e-12);
    assert!((c[3] - 6f64.sqrt()).abs() < 1e-12);
    assert_eq!(c[0], 0.0);
    assert!(tmp.path().join("h/hermite.json").exists());
    assert_eq!(json(&tmp.path().join("h/manifest.json"))["command"], "hermite");
}

#[test]
fn hermite_of_scaled_tanh() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(tmp.path(), &["hermite", "--tanh-beta", "2.5", "--K", "40", "--out", "h"]);
    assert_eq!(code(&out), 0);
    let c = coeff_rows(&fs::read_to_string(tmp.path().join("h/hermite.csv")).unwrap());
    assert!(c.iter().step_by(2).all(|v| v.abs() < 1e-12));
    let report = json(&tmp.path().join("h/hermite.json"));
    assert!(report["parseval_residual"].as_f64().unwrap() >= 0.0);
}

#[test]
fn malformed_flags_exit_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["hermite", "--K", "six"][..],
        &["hermite", "--poly", "0,1", "--tanh-beta", "2"],
        &["frobnicate"],
        &["ensemble", "--kind", "pentagon"],
        &["--jobs", "0", "hermite"],
        &["reduce", "--mode", "noisy", "--ell", "4"],
    ] {
        let out = tensornet(tmp.path(), args);
        assert_eq!(code(&out), 2, "{args:?}");
    }
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn config_documents_are_strict() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), r#"{"hermite": {"truncation": 6}, "colour": 1}"#).unwrap();
    assert_eq!(code(&tensornet(tmp.path(), &["--config", "bad.json", "hermite"])), 2);
    fs::write(tmp.path().join("other.json"), r#"{"command": "risk"}"#).unwrap();
    assert_eq!(code(&tensornet(tmp.path(), &["--config", "other.json", "hermite"])), 2);
    fs::write(tmp.path().join("ok.json"), r#"{"hermite": {"activation": {"kind": "polynomial", "coeffs": [0, 0, 0, 1]}, "truncation": 5}}"#)
        .unwrap();
    let out = tensornet(tmp.path(), &["--config", "ok.json", "hermite", "--out", "h"]);
    assert_eq!(code(&out), 0);
    let c = coeff_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(c.len(), 6);
    assert!((c[1] - 3.0).abs() < 1e-12);
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), r#"{"seed": 3, "hermite": {"truncation": 5}}"#).unwrap();
    let out = tensornet(tmp.path(), &["--config", "c.json", "--seed", "9", "hermite", "--K", "7", "--out", "h"]);
    assert_eq!(code(&out), 0);
    let m = json(&tmp.path().join("h/manifest.json"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["hermite"]["truncation"], 7);
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, extra: &[&str], out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_tensornet"));
        cmd.current_dir(tmp.path()).env_remove("TENSORNET_SEED");
        if let Some(v) = env {
            cmd.env("TENSORNET_SEED", v);
        }
        let status = cmd.args(extra).args(["ensemble", "--kind", "simplex", "--d", "6", "--r", "14", "--out", out]).status().unwrap();
        assert!(status.success());
        fs::read_to_string(tmp.path().join(out).join("ensemble.csv")).unwrap()
    };
    let from_env = run(Some("5"), &[], "a");
    let from_flag = run(None, &["--seed", "5"], "b");
    let flag_wins = run(Some("6"), &["--seed", "5"], "c");
    let default = run(None, &[], "d");
    assert_eq!(from_env, from_flag);
    assert_eq!(flag_wins, from_flag);
    assert_ne!(default, from_flag);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tensornet"));
    let bad = cmd.current_dir(tmp.path()).env("TENSORNET_SEED", "minus one").args(["hermite"]).status().unwrap();
    assert_eq!(bad.code(), Some(2));
}

#[test]
fn ensemble_writes_tensor_with_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(tmp.path(), &["ensemble", "--kind", "identity", "--d", "4", "--r", "4", "--tensor-order", "3", "--out", "e"]);
    assert_eq!(code(&out), 0);
    let t = tensornet::io::read_tensor(&tmp.path().join("e/moment_k3.bin")).unwrap();
    assert_eq!((t.order(), t.dim()), (3, 4));
    assert_eq!(t.get(&[2, 2, 2]), 1.0);
    assert_eq!(t.get(&[0, 1, 1]), 0.0);
    let report = json(&tmp.path().join("e/assumptions.json"));
    assert_eq!(report["delta"], 0.0);
    assert_eq!(tensornet::io::read_sidecar(&tmp.path().join("e/moment_k3.bin")).unwrap().rows, 4);
}

#[test]
fn risk_checks_the_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(tmp.path(), &["risk", "--out", "r"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&tmp.path().join("r/risk.json"));
    assert_eq!(r["bound"]["status"], "checked");
    assert_eq!(r["bound"]["holds"], true);
    assert!(r["risk"]["population_mse"].as_f64().unwrap() >= r["risk"]["bound_rhs"].as_f64().unwrap());
}

#[test]
fn risk_of_the_teacher_itself_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(tmp.path(), &["risk", "--student-teacher", "--out", "r"]);
    assert_eq!(code(&out), 0);
    let r = json(&tmp.path().join("r/risk.json"));
    assert!(r["risk"]["population_mse"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn infeasible_teacher_is_reported_not_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(
        tmp.path(),
        &["risk", "--teacher-kind", "random_isotropic", "--d", "10", "--r", "40", "--epsilon", "0.6", "--out", "r"],
    );
    assert_eq!(code(&out), 0);
    let r = json(&tmp.path().join("r/risk.json"));
    assert_eq!(r["risk"]["bound_applicable"], false);
    assert_eq!(r["bound"]["status"], "not_in_scope");
}

#[test]
fn unreachable_correlation_level_is_a_config_error() {
    // Simplex students need epsilon >= 1/sqrt(d).
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(tmp.path(), &["risk", "--epsilon", "0.1", "--out", "r"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn risk_sweep_has_no_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(tmp.path(), &["risk", "--teacher-kind", "centered_identity", "--d", "16", "--r", "16", "--epsilon", "0.2", "--sweep", "--out", "r"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("r/bound_sweep.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains(",checked,")));
    assert!(!csv.lines().any(|l| l.ends_with(",false")));
}

#[test]
fn reduce_parity_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(tmp.path(), &["reduce", "--mode", "parity", "--ell", "3", "--coeffs", "0,0.7,0,-0.4", "--out", "r"]);
    assert_eq!(code(&out), 0);
    let r = json(&tmp.path().join("r/reduce_report.json"));
    assert!(r["max_rel_error"].as_f64().unwrap() < 1e-9);
    assert_eq!(r["passed"], true);
    assert_eq!(fs::read_to_string(tmp.path().join("r/labels.csv")).unwrap().lines().count(), 101);
}

#[test]
fn reduce_two_tensor_writes_both_tensors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(
        tmp.path(),
        &["reduce", "--mode", "two_tensor", "--ell", "3", "--coeffs", "0.4,-1,0.7,0.3,-0.2", "--write-tensors", "--out", "r"],
    );
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("r/moment_k3.bin").exists());
    assert!(tmp.path().join("r/moment_k4.bin").exists());
}

#[test]
fn reduce_noisy_with_orthonormal_teacher_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["reduce", "--mode", "noisy", "--ell", "4", "--p", "2", "--m", "3", "--coeffs", "1,1", "--teacher-kind", "identity", "--d", "9", "--r", "9", "--out", "r"];
    assert_eq!(code(&tensornet(tmp.path(), &args)), 0);
    let r = json(&tmp.path().join("r/reduce_report.json"));
    assert_eq!(r["max_abs_error"], 0.0);
    assert_eq!(r["error_bound_ok"], true);
}

#[test]
fn reduce_memory_guard_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(tmp.path(), &["reduce", "--ell", "5", "--coeffs", "0,1,0,0,0,1", "--d", "50", "--r", "50", "--out", "r"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("resource guard"));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn sgd_divergence_exits_3_with_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(tmp.path(), &["sgd", "--d", "20", "--r", "20", "--steps", "20000", "--window", "1000", "--step-size", "10", "--out", "s"]);
    assert_eq!(code(&out), 3);
    let summary = json(&tmp.path().join("s/summary.json"));
    assert!(summary["runs"][0]["diverged"].is_string());
    assert!(tmp.path().join("s/trace_r20_s10.csv").exists());
}

#[test]
fn sgd_single_run_from_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tensornet(
        tmp.path(),
        &["--seed", "2", "sgd", "--d", "5", "--r", "5", "--steps", "2000", "--window", "500", "--step-size", "0.05", "--step-scaling", "width_dim", "--out", "s"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("s/trace_r5_s0.05.csv")).unwrap();
    assert!(csv.starts_with("step,norm_gen_err,chamfer_err,raw_mse\n"));
    assert_eq!(csv.lines().count(), 5);
    let m = json(&tmp.path().join("s/manifest.json"));
    assert_eq!(m["sgd"]["run"]["seed"], 2);
    assert_eq!(m["sgd"]["run"]["step_scaling"], "width_dim");
    assert!(json(&tmp.path().join("s/timing.json"))["r5_s0.05"].is_number());
    assert_eq!(code(&tensornet(tmp.path(), &["sgd", "--scale", "desk", "--d", "5"])), 2);
    assert_eq!(code(&tensornet(tmp.path(), &["sgd", "--scale", "huge"])), 2);
}

/// Re-running from a manifest reproduces every artifact byte for byte.
fn rerun_matches(args: &[&str], files: &[&str]) {
    let tmp = tempfile::tempdir().unwrap();
    let mut first: Vec<&str> = args.to_vec();
    first.extend(["--out", "a"]);
    assert_eq!(code(&tensornet(tmp.path(), &first)), 0, "{args:?}");
    let cmd = args.iter().find(|a| ["hermite", "ensemble", "risk", "reduce", "sgd", "verify"].contains(a)).unwrap();
    assert_eq!(code(&tensornet(tmp.path(), &["--config", "a/manifest.json", "--out", "c", cmd])), 0);
    for f in files {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let c = fs::read(tmp.path().join("c").join(f)).unwrap();
        assert!(a == c, "{f} differs after re-run of {args:?}");
    }
}

#[test]
fn manifests_reproduce_runs() {
    rerun_matches(&["--seed", "11", "ensemble", "--kind", "haar_centered", "--d", "5", "--r", "10"], &["ensemble.csv", "assumptions.json"]);
    rerun_matches(&["--seed", "4", "risk", "--teacher-kind", "centered_identity", "--d", "12", "--r", "12", "--epsilon", "0.2", "--student-r", "7"], &["risk.json"]);
    rerun_matches(&["--seed", "8", "reduce", "--mode", "noisy", "--ell", "4", "--p", "2", "--m", "3", "--coeffs", "1,0.5", "--d", "9", "--r", "10"], &[
        "labels.csv",
        "reduce_report.json",
    ]);
    rerun_matches(&["--seed", "3", "sgd", "--d", "4", "--r", "4", "--steps", "1000", "--window", "250", "--step-size", "0.1"], &[
        "trace_r4_s0.1.csv",
        "trace_r4_s0.1.json",
        "summary.json",
    ]);
}
