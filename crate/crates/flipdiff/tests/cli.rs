use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flipdiff::output::Table;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn flipdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flipdiff")).args(args).output().expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: [&str; 4] = ["--override", "numerics.radius=3", "--override", "numerics.order=1"];

#[test]
fn oracle_check_on_reference_torus_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("oracle_reference.json");
    let out = flipdiff(&["oracle-check", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let verdicts = read_json(&dir.path().join("verdicts.json"));
    let list = verdicts["verdicts"].as_array().unwrap();
    assert_eq!(list.len(), 3);
    assert!(list.iter().all(|v| v["passed"] == true), "{verdicts}");
}

#[test]
fn oracle_check_reports_failure_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("oracle_reference.json");
    let out = flipdiff(&[
        "oracle-check",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "run.trajectories=200",
        "--override",
        "numerics.fourier_tol=1e-30",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let verdicts = read_json(&dir.path().join("verdicts.json"));
    assert!(verdicts["verdicts"].as_array().unwrap().iter().any(|v| v["passed"] == false));
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn spectral_rejects_zero_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("lambda_scan.json");
    let out = flipdiff(&["spectral", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--override", "noise.lambda=0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("noise.lambda"), "{err}");
}

#[test]
fn invalid_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("lambda_scan.json");
    let out = flipdiff(&["spectral", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--override", "noise.rate=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise.rate"));
    let out = flipdiff(&["simulate", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_reproduce_csv_bytes_and_manifest_hashes() {
    let cfg = configs().join("lambda_scan.json");
    let mut bodies = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["spectral", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
        args.extend(SMALL);
        let out = flipdiff(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let manifest = read_json(&dir.path().join("manifest.json"));
        let files = manifest["files"].as_array().unwrap();
        let names: Vec<&str> = files.iter().map(|f| f["path"].as_str().unwrap()).collect();
        for expected in ["config.resolved.json", "spectral.csv", "spectral.json", "timestamps.json"] {
            assert!(names.contains(&expected), "{names:?}");
        }
        for f in files {
            let body = std::fs::read(dir.path().join(f["path"].as_str().unwrap())).unwrap();
            let hex: String = Sha256::digest(&body).iter().map(|b| format!("{b:02x}")).collect();
            assert_eq!(f["sha256"], hex.as_str());
            assert_eq!(f["bytes"], body.len());
        }
        assert_eq!(manifest["master_seed"], 1);
        bodies.push(std::fs::read(dir.path().join("spectral.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn simulate_reruns_are_identical() {
    let cfg = configs().join("diffusion_mc.json");
    let mut bodies = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let out = flipdiff(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "--threads",
            "1",
            "--override",
            "run.trajectories=40",
            "--override",
            "run.blocks=10",
            "--override",
            "run.horizon=8",
            "--override",
            "run.fit_window=[4,8]",
            "--override",
            "run.clt_times=[2,4,8]",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let moments = std::fs::read_to_string(dir.path().join("moments.csv")).unwrap();
        let table = Table::parse_csv(&moments).unwrap();
        assert_eq!(table.column("t").unwrap().len(), 9);
        assert!(table.column("mass").unwrap().iter().all(|m| (m - 1.0).abs() < 1e-9));
        bodies.push((moments, std::fs::read(dir.path().join("clt.csv")).unwrap()));
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn report_fits_the_emitted_scan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("lambda_scan.json");
    let mut args = vec!["asymptotics", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
    args.extend(SMALL);
    args.extend(["--override", "noise.lambda_ladder=[0.4,0.2,0.1]"]);
    let out = flipdiff(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = flipdiff(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let rows = Table::parse_csv(&std::fs::read_to_string(dir.path().join("asymptotics.csv")).unwrap()).unwrap();
    let xs: Vec<f64> = rows.column("lambda").unwrap().iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = rows.column("trace").unwrap().iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();

    let summary = read_json(&dir.path().join("summary.json"));
    let reported = summary["slope_log_trace_vs_log_lambda"].as_f64().unwrap();
    assert!((reported - slope).abs() < 1e-12, "{reported} vs {slope}");
    assert!(slope < -1.5, "{slope}");
    let merged = Table::parse_csv(&std::fs::read_to_string(dir.path().join("merged.csv")).unwrap()).unwrap();
    assert_eq!(merged.rows.len(), 3);
}

#[test]
fn report_without_inputs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = flipdiff(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
