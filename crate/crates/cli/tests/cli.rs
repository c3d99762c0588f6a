use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;
use wntorus::{sample_wn, WnParams};

fn wntorus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wntorus")).args(args).output().expect("binary runs")
}

fn write_sample(path: &Path, params: &WnParams, n: usize, seed: u64) {
    let s = sample_wn(params, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut text = String::from("phi,psi\n");
    for row in s.rows() {
        text.push_str(&format!("{},{}\n", row[0], row[1]));
    }
    fs::write(path, text).unwrap();
}

const KEYS: [&str; 13] = [
    "coefficients",
    "converged",
    "iterations",
    "loglik",
    "method",
    "mixed",
    "mu",
    "n",
    "p",
    "reason",
    "sigma",
    "unwrapped_path",
    "warnings",
];

fn check_schema(v: &Value, p: usize) {
    let obj = v.as_object().expect("object");
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, KEYS);
    assert_eq!(v["p"], p);
    let mu = v["mu"].as_array().unwrap();
    assert_eq!(mu.len(), p);
    assert!(mu.iter().all(|m| (0.0..TAU).contains(&m.as_f64().unwrap())));
    let sigma = v["sigma"].as_array().unwrap();
    assert_eq!(sigma.len(), p);
    assert!(sigma.iter().all(|r| r.as_array().unwrap().len() == p));
    assert!(v["loglik"].as_f64().unwrap().is_finite());
    assert!(v["iterations"].is_u64());
    assert!(v["converged"].is_boolean());
    assert!(v["warnings"].is_array());
}

fn truth() -> WnParams {
    let s = (PI / 4.0).powi(2);
    WnParams::new(&[1.0, 5.5], DMatrix::from_row_slice(2, 2, &[s, 0.5 * s, 0.5 * s, s])).unwrap()
}

#[test]
fn fit_em_end_to_end() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("data.csv");
    write_sample(&input, &truth(), 500, 1);
    let out = wntorus(&["fit", input.to_str().unwrap(), "--method", "em"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    check_schema(&v, 2);
    assert_eq!(v["method"], "em");
    assert_eq!(v["n"], 500);
    assert_eq!(v["converged"], true);
    assert!(v["coefficients"].is_null() && v["mixed"].is_null());

    // round trip: the estimate is close to the generating parameters
    let t = truth();
    let mu: Vec<f64> = v["mu"].as_array().unwrap().iter().map(|m| m.as_f64().unwrap()).collect();
    assert!(wntorus::angle_separation(&mu, t.mu().as_slice()).unwrap() < 0.01);
    let sigma: Vec<f64> =
        v["sigma"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().clone()).map(|x| x.as_f64().unwrap()).collect();
    let hat = DMatrix::from_row_slice(2, 2, &sigma);
    assert!(wntorus::scatter_divergence(&hat, t.sigma()).unwrap() < 0.05);
}

#[test]
fn every_method_runs() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("data.csv");
    write_sample(&input, &truth(), 150, 2);
    let mut logliks = Vec::new();
    for method in ["em", "cem", "direct", "cem-then-em"] {
        let out = wntorus(&["fit", input.to_str().unwrap(), "--method", method]);
        assert!(out.status.success(), "{method}: {}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        check_schema(&v, 2);
        assert_eq!(v["method"], method);
        logliks.push(v["loglik"].as_f64().unwrap());
    }
    for l in &logliks {
        assert!((l - logliks[0]).abs() < 1e-2, "{logliks:?}");
    }
}

#[test]
fn cem_reports_coefficients_and_unwrapped_points() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("data.csv");
    write_sample(&input, &truth(), 100, 3);
    let unwrapped = dir.path().join("x.csv");
    let json = dir.path().join("fit.json");
    let out = wntorus(&[
        "fit",
        input.to_str().unwrap(),
        "--method",
        "cem",
        "--unwrapped-output",
        unwrapped.to_str().unwrap(),
        "-o",
        json.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    check_schema(&v, 2);
    assert_eq!(v["coefficients"].as_array().unwrap().len(), 100);
    assert_eq!(v["unwrapped_path"], unwrapped.to_str().unwrap());
    assert_eq!(fs::read_to_string(&unwrapped).unwrap().lines().count(), 100);
}

#[test]
fn out_of_range_value_is_wrapped_with_warning() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("data.csv");
    fs::write(&input, "7.0\n0.2\n0.4\n6.1\n0.3\n5.9\n").unwrap();
    let out = wntorus(&["fit", input.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning") && stderr.contains("wrapped to 0.7168"), "{stderr}");
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let warnings = v["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains(&format!("{}", 7.0 - TAU))));
}

#[test]
fn degrees_are_converted_on_ingest() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("data.csv");
    fs::write(&input, "10\n350\n5\n355\n20\n").unwrap();
    let out = wntorus(&["fit", input.to_str().unwrap(), "--degrees"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let mu = v["mu"][0].as_f64().unwrap();
    assert!(mu < 0.2 || mu > TAU - 0.2, "{mu}");
}

#[test]
fn malformed_input_exits_one() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out = wntorus(&["fit", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty.csv"));

    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "0.1,0.2\n0.3\n").unwrap();
    assert_eq!(wntorus(&["fit", ragged.to_str().unwrap()]).status.code(), Some(1));

    let missing = dir.path().join("missing.csv");
    assert_eq!(wntorus(&["fit", missing.to_str().unwrap()]).status.code(), Some(1));

    let bad_method = wntorus(&["fit", ragged.to_str().unwrap(), "--method", "magic"]);
    assert_ne!(bad_method.status.code(), Some(0));
}

#[test]
fn degenerate_data_exits_two() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("constant.csv");
    fs::write(&input, "1.0\n1.0\n1.0\n1.0\n").unwrap();
    let out = wntorus(&["fit", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}

#[test]
fn mixed_fit_reports_cross_covariance() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("mixed.csv");
    let s = sample_wn(&WnParams::isotropic(&[2.0], 0.3).unwrap(), 200, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let mut text = String::from("angle,length\n");
    for (i, row) in s.rows().enumerate() {
        text.push_str(&format!("{},{}\n", row[0], 3.0 * row[0] + (i % 7) as f64 * 0.01));
    }
    fs::write(&input, text).unwrap();
    for method in ["em", "cem", "direct"] {
        let out = wntorus(&["fit", input.to_str().unwrap(), "--linear-columns", "length", "--method", method]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        check_schema(&v, 1);
        let mixed = &v["mixed"];
        assert_eq!(mixed["p_linear"], 1);
        let s11 = v["sigma"][0][0].as_f64().unwrap();
        let s12 = mixed["sigma12"][0][0].as_f64().unwrap();
        assert!((s12 / s11 - 3.0).abs() < 0.05, "{s12} {s11}");
    }
}

fn config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.txt");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_writes_reproducible_report() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "p = 2\nn = 40\nsigma = pi/4\nreps = 2\nmethods = em\nseed = 9\n");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let out = wntorus(&["simulate", "--config", &cfg, "--output", a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("median wilks"));
    let out = wntorus(&["--threads", "1", "simulate", "--config", &cfg, "--output", b.to_str().unwrap()]);
    assert!(out.status.success());
    let (a, b) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 3);
}

#[test]
fn simulate_rejects_bad_configs() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("r.csv");
    let cfg = config(dir.path(), "methods = em, bogus\n");
    let out = wntorus(&["simulate", "--config", &cfg, "--output", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("em, cem, direct, cem-then-em"), "{err}");

    let cfg = config(dir.path(), "p = 10\nmethods = direct\n");
    let out = wntorus(&["simulate", "--config", &cfg, "--output", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("guard"));
}

fn gencor(p: &str, seed: &str) -> (f64, Vec<Vec<f64>>) {
    let out = wntorus(&["gencor", "--p", p, "--cn", "20", "--seed", seed]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let cond = lines.next().unwrap().strip_prefix("# condition_number ").unwrap().parse().unwrap();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (cond, rows)
}

#[test]
fn gencor_output() {
    let (cond, rows) = gencor("2", "4");
    assert!((cond - 20.0).abs() < 0.02);
    assert!((rows[0][1].abs() - 0.9048).abs() < 1e-4);
    let (cond, rows) = gencor("5", "11");
    assert!((cond / 20.0 - 1.0).abs() < 1e-3);
    assert_eq!(rows.len(), 5);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 5);
        assert_eq!(r[i], 1.0);
    }
    let out = wntorus(&["gencor", "--p", "1"]);
    assert_eq!(out.status.code(), Some(1));
}
