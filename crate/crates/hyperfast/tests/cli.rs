use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use hyperfast::config::{parse_config, Datum, Mode};
use hyperfast::io::sha256_hex;
use serde_json::Value;

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn hyperfast(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hyperfast")).args(args).output().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn check_manifest(dir: &Path) -> Value {
    let manifest: Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let bytes = fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&bytes), "{}", f["path"]);
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
    manifest
}

#[test]
fn config_examples() {
    let cfg = parse_config(r#"{"mode": "stationary", "N": 3, "m": 0.5}"#).unwrap();
    assert_eq!(cfg.mode, Mode::Stationary);
    assert_eq!(cfg.grid.nodes, 3000);
    assert_eq!(cfg.grid.radius, 15.0);

    let cfg = parse_config(r#"{"mode": "evolve", "N": 3, "m": 0.5, "T": 2, "datum": "separable"}"#).unwrap();
    assert_eq!(cfg.resolved_datum(), Some(Datum::Separable { big_t: Some(2.0) }));

    // Required and out-of-range fields name themselves in the error.
    let missing = parse_config(r#"{"mode": "evolve", "N": 3, "m": 0.5}"#).unwrap_err().to_string();
    assert!(missing.contains("datum"), "{missing}");
    let bad_m = parse_config(r#"{"mode": "stationary", "N": 3, "m": 1.5}"#).unwrap_err().to_string();
    assert!(bad_m.contains('m'), "{bad_m}");
    assert!(parse_config(r#"{"mode": "stationary", "N": 1, "m": 0.5}"#).is_err());
    assert!(parse_config(r#"{"mode": "evolve", "N": 3, "m": 0.5, "datum": "separable"}"#).is_err());
    assert!(parse_config(r#"{"mode": "stationary", "N": 3, "m": 0.5, "grid": {"R": 15, "cells": 10}}"#).is_err());
}

#[test]
fn stationary_run_writes_a_decreasing_profile() {
    let dir = out_dir("stationary");
    let out = hyperfast(&["stationary", "--N", "3", "--m", "0.5", "--c", "1", "--output_dir", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.join("profile.csv"));
    assert_eq!(header, ["r", "V", "Vprime"]);
    assert!((rows[0][1] - 6.0).abs() < 1e-6);
    assert!(rows.windows(2).all(|w| w[1][1] < w[0][1] && w[1][0] > w[0][0]));
    let manifest = check_manifest(&dir);
    assert!((manifest["measured"]["l"].as_f64().unwrap() / 24.0 - 1.0).abs() < 1e-6);
    let report: Value = serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["verdict"] == "PASS"));
}

#[test]
fn evolve_runs_are_byte_identical() {
    let run = |name: &str| {
        let dir = out_dir(name);
        let out = hyperfast(&[
            "evolve", "--N", "3", "--m", "0.5", "--T", "2", "--datum", "separable", "--nodes", "600",
            "--t_end", "0.5", "--snapshots", "3", "--output_dir", dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let (a, b) = (run("det_a"), run("det_b"));
    let ma = check_manifest(&a);
    let mb = check_manifest(&b);
    let (fa, fb) = (ma["files"].as_array().unwrap(), mb["files"].as_array().unwrap());
    assert_eq!(fa.len(), fb.len());
    let mut csvs = 0;
    for (x, y) in fa.iter().zip(fb) {
        let path = x["path"].as_str().unwrap();
        if path.ends_with(".csv") {
            assert_eq!(x["sha256"], y["sha256"], "{path} differs between runs");
            csvs += 1;
        }
    }
    assert!(csvs >= 4, "only {csvs} CSV files");
    assert!(a.join("timeseries.csv").exists() && a.join("snapshots").is_dir());
}

#[test]
fn sweep_writes_one_manifest_per_exponent() {
    let dir = out_dir("sweep");
    let out = hyperfast(&[
        "sweep", "--N", "3", "--sweep_m", "0.4,0.5,0.6,0.8", "--sweep_mode", "stationary", "--output_dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for m in ["0.4", "0.5", "0.6", "0.8"] {
        check_manifest(&dir.join(format!("m_{m}")));
    }
    let (header, rows) = read_csv(&dir.join("summary.csv"));
    assert_eq!(header[0], "m");
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), [0.4, 0.5, 0.6, 0.8]);
    assert!(rows.iter().all(|r| r[1] == 1.0));
    check_manifest(&dir);
}

#[test]
fn exit_codes() {
    // Invalid configuration.
    let out = hyperfast(&["stationary", "--N", "3", "--m", "1.5", "--output_dir", out_dir("bad").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains('m'));

    // A run that completes but misses a configured tolerance.
    let dir = out_dir("strict");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("strict.json");
    fs::write(&cfg, r#"{"N": 3, "m": 0.5, "tolerances": {"residual": 1e-30}}"#).unwrap();
    let out = hyperfast(&["stationary", "--config", cfg.to_str().unwrap(), "--output_dir", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.join("report.json").exists());

    // Admissible barriers all pass.
    let dir = out_dir("barriers");
    let out = hyperfast(&["barriers", "--N", "3", "--m", "0.5", "--T", "2", "--output_dir", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
