use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gwtk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwtk")).args(args).env("GWTK_LOG", "error").output().expect("binary runs")
}

/// Writes `config` to a temp dir and runs `args --config <file> --out <dir>/out`.
fn run_with(config: &str, args: &[&str]) -> (TempDir, Output) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let output = gwtk(&all);
    (dir, output)
}

fn read_json(dir: &TempDir, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.path().join("out").join(name)).unwrap()).unwrap()
}

fn read(dir: &TempDir, name: &str) -> String {
    fs::read_to_string(dir.path().join("out").join(name)).unwrap()
}

fn out_dir_absent(dir: &TempDir) -> bool {
    !Path::new(&dir.path().join("out")).exists()
}

const SCALAR: &str = r#"{"dim": 1, "rows": [[0.5]]}"#;
const PAIR: &str = r#"{"dim": 2, "rows": [[0.2, 0.1], [0.3, 0.2]]}"#;

#[test]
fn solve_scalar_example() {
    let (dir, out) = run_with(&format!(r#"{{"H": {SCALAR}, "u": [0.089299]}}"#), &["solve"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir, "solve.json");
    assert_eq!(v["status"], "converged");
    assert!((v["L"][0].as_f64().unwrap() - 0.2).abs() < 1e-5);
    assert_eq!(v["config"]["u"][0], 0.089299);
    assert_eq!(v["seed"], 0);
    // 0.089299 is above t0 of the best certificate of 0.5: no closed form.
    assert!(v["bounds"]["closed_form"].is_null());
    assert!(v["bounds"]["self_improving"][0].as_f64().unwrap() >= 0.2);
}

#[test]
fn solve_in_box_has_all_bounds() {
    let (dir, out) = run_with(&format!(r#"{{"H": {PAIR}, "u": [0.05, 0.05], "tol": 1e-12}}"#), &["solve"]);
    assert_eq!(out.status.code(), Some(0));
    let v = read_json(&dir, "solve.json");
    assert_eq!(v["config"]["solver"]["tol"], 1e-12);
    assert!(v["config"].get("tol").is_none());
    for m in 0..2 {
        let l = v["L"][m].as_f64().unwrap();
        let cf = v["bounds"]["closed_form"][m].as_f64().unwrap();
        let ap = v["bounds"]["a_priori"][m].as_f64().unwrap();
        let ep = v["expected_progeny"][m].as_f64().unwrap();
        assert!(ep <= l && l <= cf && l <= ap, "{v}");
    }
}

#[test]
fn solve_divergent_exits_one() {
    let (dir, out) = run_with(&format!(r#"{{"H": {SCALAR}, "u": [2.0]}}"#), &["solve"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(read_json(&dir, "solve.json")["status"], "divergent");
}

#[test]
fn ray_csv_ends_at_critical_point() {
    let (dir, out) = run_with(&format!(r#"{{"H": {SCALAR}, "d": [1]}}"#), &["domain", "ray"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = read(&dir, "domain_ray.csv");
    assert!(csv.starts_with("# config: "));
    let last = csv.lines().last().unwrap();
    let t: f64 = last.split(',').next().unwrap().parse().unwrap();
    assert!((t - (2f64.ln() - 0.5)).abs() < 1e-8, "{last}");
    assert!(last.contains(",boundary,"));
    let ts: Vec<f64> = csv.lines().skip(3).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[0] < w[1]));
    assert!(read_json(&dir, "domain_ray.json")["t_critical"].as_f64().is_some());
}

#[test]
fn domain_modes() {
    let (dir, out) = run_with(&format!(r#"{{"H": {PAIR}, "u": [0.1, 0.1]}}"#), &["domain", "classify"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read_json(&dir, "domain_classify.json")["status"], "interior");

    let (dir, out) = run_with(&format!(r#"{{"H": {PAIR}, "y": [1, 1]}}"#), &["domain", "boundary-from-y"]);
    assert_eq!(out.status.code(), Some(0));
    let v = read_json(&dir, "domain_boundary_from_y.json");
    assert_eq!(v["status"], "boundary");
    assert!((v["u"][0].as_f64().unwrap() - 0.481_779_618_775_860_9).abs() < 1e-8);

    let h = r#"{"dim": 2, "rows": [[1.5, 0.0], [0.0, 0.5]]}"#;
    let (dir, out) = run_with(&format!(r#"{{"H": {h}}}"#), &["domain", "reduce"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read_json(&dir, "domain_reduce.json")["types"], serde_json::json!([1]));
}

#[test]
fn tails_csv_shape() {
    let (dir, out) = run_with(&format!(r#"{{"H": {PAIR}, "u": [0.05, 0.05], "generations": 4}}"#), &["tails"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = read(&dir, "tails.csv");
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "n,R[0],R[1],bound[0],bound[1]");
    assert_eq!(rows.len(), 6);
    for row in &rows[1..] {
        let x: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(x[1] <= x[3] && x[2] <= x[4], "{row}");
    }
}

#[test]
fn cluster_bound_curve() {
    let cfg = format!(
        r#"{{"kernel": {{"type": "compact_support", "H": {SCALAR}, "A": 1}}, "u": [0.05], "d_grid": [0, 1, 2, 3.5]}}"#
    );
    let (dir, out) = run_with(&cfg, &["cluster-bound"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = read(&dir, "cluster_bound.csv");
    assert!(csv.contains("# report: {\"regime\":\"compact\""));
    let b: Vec<f64> = csv.lines().skip(4).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(b.len(), 4);
    assert!((b[1] / b[0] - 0.5).abs() < 1e-12 && (b[3] / b[2] - 0.5).abs() < 1e-12);
}

#[test]
fn hawkes_bound_json() {
    let cfg = format!(
        r#"{{"mu": [1], "kernel": {{"type": "exponential_decay", "H": {SCALAR}, "c": 1}}, "window": 10,
            "u": [0.05], "certificate": {{"r": 0.5, "K": 1}}}}"#
    );
    let (dir, out) = run_with(&cfg, &["hawkes-bound"]);
    assert_eq!(out.status.code(), Some(0));
    let v = read_json(&dir, "hawkes_bound.json");
    assert!((v["bound"].as_f64().unwrap() - 3.052587273687717).abs() < 1e-9);
    assert!((v["bound_explicit"].as_f64().unwrap() - 9.152504718933604).abs() < 1e-9);
    assert!(v["L_u"][0].as_f64().is_some());
}

#[test]
fn config_errors_exit_two_without_artifacts() {
    let cases = [
        ("{\"H\": ", vec!["solve"]),
        (r#"{"H": {"dim": 1, "rows": [[0.5]]}, "u": [0.1], "extra": 1}"#, vec!["solve"]),
        (r#"{"H": {"dim": 1, "rows": [[-0.5]]}, "u": [0.1]}"#, vec!["solve"]),
        (r#"{"H": {"dim": 1, "rows": [[0.5]]}, "u": [0.1, 0.2]}"#, vec!["solve"]),
        (r#"{"H": {"dim": 1, "rows": [[0.5]]}, "d": [0]}"#, vec!["domain", "ray"]),
        (
            r#"{"mu": [1], "kernel": {"type": "dirac_comb", "H": {"dim": 1, "rows": [[1.5]]}, "lag": 1}, "window": 1, "u": [0.1]}"#,
            vec!["hawkes-bound"],
        ),
        (r#"{"kernels": 0}"#, vec!["convolve-check"]),
    ];
    for (cfg, args) in cases {
        let (dir, out) = run_with(cfg, &args);
        assert_eq!(out.status.code(), Some(2), "{cfg}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out_dir_absent(&dir), "{cfg}");
    }
    let dir = TempDir::new().unwrap();
    let out = gwtk(&["solve", "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out_dir_absent(&dir));
}

const VERIFY: &str = r#"{"H": {"dim": 2, "rows": [[0.2, 0.1], [0.3, 0.2]]}, "u": [0.05, 0.05], "replicates": 4000}"#;

#[test]
fn artifacts_are_byte_identical() {
    let (a, out_a) = run_with(VERIFY, &["verify", "laplace", "--threads", "1"]);
    let (b, out_b) = run_with(VERIFY, &["verify", "laplace", "--threads", "3"]);
    assert_eq!((out_a.status.code(), out_b.status.code()), (Some(0), Some(0)));
    assert_eq!(read(&a, "verify_laplace.csv"), read(&b, "verify_laplace.csv"));

    let cfg = format!(r#"{{"H": {PAIR}, "u": [0.05, 0.05]}}"#);
    let (a, _) = run_with(&cfg, &["solve"]);
    let (b, _) = run_with(&cfg, &["solve"]);
    assert_eq!(read(&a, "solve.json"), read(&b, "solve.json"));
}

#[test]
fn seed_flag_overrides_config() {
    let (a, _) = run_with(VERIFY, &["verify", "laplace", "--seed", "11"]);
    let (b, _) = run_with(VERIFY, &["verify", "laplace"]);
    let (ca, cb) = (read(&a, "verify_laplace.csv"), read(&b, "verify_laplace.csv"));
    assert!(ca.contains("# seed: 11") && ca.contains("\"seed\":11"));
    assert!(cb.contains("# seed: 0"));
    assert_ne!(ca.lines().last(), cb.lines().last());
}

fn passing_rows(csv: &str) -> usize {
    csv.lines().filter(|l| !l.starts_with("point,") && l.ends_with(",pass")).count()
}

#[test]
fn verify_targets_pass() {
    let (dir, out) = run_with(
        &format!(r#"{{"H": {PAIR}, "u": [0.05, 0.05], "replicates": 4000, "generations": 3}}"#),
        &["verify", "tails"],
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = read(&dir, "verify_tails.csv");
    assert!(csv.contains("point,empirical,std_error,bound,pass"));
    assert_eq!(passing_rows(&csv), 8);

    let cfg = format!(
        r#"{{"kernel": {{"type": "exponential_decay", "H": {SCALAR}, "c": 1}}, "u": [0.05], "d_grid": [0, 1, 4],
            "replicates": 4000}}"#
    );
    let (dir, out) = run_with(&cfg, &["verify", "cluster"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(passing_rows(&read(&dir, "verify_cluster.csv")), 3);

    let cfg = format!(
        r#"{{"mu": [1], "kernel": {{"type": "exponential_decay", "H": {SCALAR}, "c": 1}}, "window": 5,
            "u_points": [[0.02]], "replicates": 4000}}"#
    );
    let (dir, out) = run_with(&cfg, &["verify", "hawkes"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(read(&dir, "verify_hawkes.csv").lines().last().unwrap().starts_with("u=0.02,"));
}

#[test]
fn verify_without_bound_exits_one() {
    // Compact support outside the certificate box has no computable bound.
    let cfg = format!(
        r#"{{"kernel": {{"type": "compact_support", "H": {SCALAR}, "A": 1}}, "u": [0.15], "d_grid": [1],
            "replicates": 100}}"#
    );
    let (dir, out) = run_with(&cfg, &["verify", "cluster"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out_dir_absent(&dir));
}

#[test]
fn convolve_check_pass_and_violation() {
    let small = r#"{"kernels": 4, "cells": 30, "exp_cells": 40}"#;
    let (dir, out) = run_with(small, &["convolve-check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir, "convolve_check.json");
    assert_eq!(v["passed"], true);
    assert_eq!(v["config"]["kernels"], 4);

    let strict = r#"{"kernels": 1, "cells": 20, "exp_cells": 40, "exp_rel_tol": 1e-9}"#;
    let (dir, out) = run_with(strict, &["convolve-check"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(read_json(&dir, "convolve_check.json")["passed"], false);
}
