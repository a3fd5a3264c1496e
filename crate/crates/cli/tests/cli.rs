use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const STABLE: &str = "[model]\nfamily = \"stable\"\nalpha = 1.5\n\n[domain]\nintervals = [[-1.0, 1.0]]\n";

fn levypot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levypot"))
        .args(args)
        .args(["--out", dir.join("out").to_str().unwrap(), "--threads", "1"])
        .output()
        .expect("binary runs")
}

fn with_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let bad = with_config(tmp.path(), "[model]\nfamily = \"stable\"\nalpha = 3.0\n[domain]\nintervals = [[-1.0, 1.0]]\n");
    assert_eq!(levypot(tmp.path(), &["kato", "--config", &bad]).status.code(), Some(2));
    let missing = tmp.path().join("nope.toml");
    assert_eq!(levypot(tmp.path(), &["kato", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    let garbled = with_config(tmp.path(), "model = [");
    assert_eq!(levypot(tmp.path(), &["green", "--config", &garbled]).status.code(), Some(2));
}

#[test]
fn kernels_writes_stamped_table() {
    let tmp = TempDir::new().unwrap();
    let out = levypot(tmp.path(), &["kernels"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(tmp.path(), "kernels.csv");
    let version = format!("# levypot {}", env!("CARGO_PKG_VERSION"));
    assert!(csv.starts_with(&version));
    let hash = csv.lines().find_map(|l| l.strip_prefix("# config_sha256=")).unwrap();
    assert_eq!(hash.len(), 64);
    assert!(csv.lines().any(|l| l == "r,h,V,M,K,dK"));
    let rows = data_rows(&csv);
    assert!(rows.len() > 100 && rows.iter().all(|r| r.len() == 6));
    assert!(read(tmp.path(), "kernel_invariants.json").contains(hash));
    assert!(read(tmp.path(), "kernels.svg").contains(hash));
}

#[test]
fn zero_drift_leaves_green_function_unchanged() {
    let tmp = TempDir::new().unwrap();
    let cfg = with_config(tmp.path(), STABLE);
    let out = levypot(tmp.path(), &["perturb", "--config", &cfg, "--grid", "40"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&read(tmp.path(), "perturb.csv"));
    // breaks at the MC sources can add nodes
    let m = (rows.len() as f64).sqrt() as usize;
    assert!(m >= 40 && m * m == rows.len(), "{} rows", rows.len());
    assert!(rows.iter().all(|r| r[4] == 1.0 && r[2] == r[3]));
}

#[test]
fn seeded_mc_runs_are_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = with_config(tmp.path(), &format!("{STABLE}\n[mc]\nsources = [0.0, 0.5]\n\n[mc.path]\npaths = 1000\n"));
    let run = |seed: &str| {
        let out = levypot(tmp.path(), &["mc", "--config", &cfg, "--seed", seed, "--grid", "60"]);
        assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
        (read(tmp.path(), "mc_green.csv"), read(tmp.path(), "mc_summary.csv"))
    };
    let a = run("11");
    assert_eq!(a, run("11"));
    assert_ne!(a.1, run("12").1);
}

#[test]
fn kato_rejects_a_strong_singularity() {
    let tmp = TempDir::new().unwrap();
    let drift = |beta: f64| format!("{STABLE}\n[drift]\nfamily = \"power\"\namplitude = 1.0\ncenter = 0.0\nbeta = {beta}\n");
    let strong = with_config(tmp.path(), &drift(0.6));
    assert_eq!(levypot(tmp.path(), &["kato", "--config", &strong]).status.code(), Some(1));
    let mild = with_config(tmp.path(), &drift(0.4));
    assert_eq!(levypot(tmp.path(), &["kato", "--config", &mild]).status.code(), Some(0));
    assert!(read(tmp.path(), "kato.json").contains("\"config_sha256\""));
}
