//! The command-line contract: files each preset writes, summary keys and how
//! bad input is reported.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spurlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spurlab")).args(args).arg("--out").arg(out).output().unwrap()
}

fn ok(args: &[&str], out: &Path) {
    let o = spurlab(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn manifest_paths(dir: &Path) -> Vec<String> {
    let m = json(&dir.join("manifest.json"));
    m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap().to_string()).collect()
}

#[test]
fn fig1_writes_three_regimes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fig1"], dir.path());
    for f in ["erm_clean.csv", "erm_noisy.csv", "mat_noisy.csv", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let s = json(&dir.path().join("summary.json"));
    for k in ["erm_clean", "erm_noisy", "mat_noisy"] {
        assert!(s[k]["test"]["worst"].is_number(), "{k}");
    }
    let header = std::fs::read_to_string(dir.path().join("erm_clean.csv")).unwrap();
    assert!(header.lines().next().unwrap().starts_with("step,loss,"));
}

#[test]
fn unknown_key_is_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = spurlab(&["fig1", "--set", "data.nope=3"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    assert!(!out.exists());
}

#[test]
fn bad_accept_arguments_exit_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_spurlab")).args(["accept", "nosuch"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_spurlab")).args(["accept", "1", "--set", "steps=3"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = spurlab(&["nosuchpreset"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn accept_prints_one_line_per_criterion() {
    let o = Command::new(env!("CARGO_BIN_EXE_spurlab")).args(["accept", "linmodel"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    assert!(text.contains("2 passed, 0 failed"));
}

#[test]
fn fig4_writes_trajectories_and_angles() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fig4"], dir.path());
    for name in ["erm", "reweight", "shift"] {
        let csv = std::fs::read_to_string(dir.path().join(format!("{name}_trajectory.csv"))).unwrap();
        assert_eq!(csv.lines().next(), Some("step,x,y"));
        assert!(csv.lines().count() > 2);
    }
    let a = json(&dir.path().join("angles.json"));
    assert!(a["erm"]["angle_to_max_margin"].as_f64().unwrap() < 1.0);
    assert!(a["shift"]["angle_to_max_margin"].as_f64().unwrap() > 5.0);
}

#[test]
fn fig2_reports_both_handles() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fig2", "--set", "data.n=30", "--set", "data.d=100", "--set", "subsample=10"], dir.path());
    let s = json(&dir.path().join("summary.json"));
    for k in ["erm", "mat"] {
        assert_eq!(s[k]["overall"]["count"], 10);
        assert!(s[k]["majority"]["mean"].is_number());
    }
    let rows = std::fs::read_to_string(dir.path().join("erm_scores.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("example_id,group,y,a,self_influence"));
    assert_eq!(rows.lines().count(), 11);
}

#[test]
fn thm1_sweep_without_noise_uses_core_feature() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["thm1"], dir.path());
    let mut r = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (clean, n) = (col("clean_test_accuracy"), col("n"));
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert!(row[clean].parse::<f64>().unwrap() >= 0.95, "{row:?}");
    }
    let s = json(&dir.path().join("summary.json"));
    assert!(s["main"]["noisy_test_attribute_agreement"].as_f64().unwrap() >= 0.90);
    assert!(rows.iter().any(|row| &row[n] == "400"));
}

#[test]
fn fig3_writes_one_grid_per_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fig3"], dir.path());
    let grids: Vec<String> = manifest_paths(dir.path()).into_iter().filter(|p| p.starts_with("grid_")).collect();
    assert_eq!(grids.len(), 3);
    let s = json(&dir.path().join("summary.json"));
    assert!(s.as_array().unwrap().iter().all(|r| r["train_loss"].as_f64().unwrap() < 1e-6));
}

#[test]
fn generate_train_and_influence_commands() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    ok(&["generate", "--set", "data.n=50", "--set", "n_test=20", "--set", "format=both"], &gen);
    for f in ["train.csv", "valid.csv", "test.csv", "train.bin", "summary.json"] {
        assert!(gen.join(f).is_file(), "{f}");
    }
    let train = dir.path().join("train");
    ok(&["train", "--set", "algorithm=mat", "--set", "data.n=60", "--set", "train.steps=100"], &train);
    for f in ["model.json", "trace.csv", "metrics.json", "probe.csv", "calibration.json"] {
        assert!(train.join(f).is_file(), "{f}");
    }
    let inf = dir.path().join("inf");
    ok(&["influence", "--set", "data.n=20", "--set", "data.d=20", "--set", "train.steps=50"], &inf);
    assert_eq!(json(&inf.join("summary.json"))["overall"]["count"], 20);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["fig6", "--seed", "3", "--set", "n_test=500"], d);
    }
    for f in ["erm.csv", "mat.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(json(&a.join("manifest.json"))["files"], json(&b.join("manifest.json"))["files"]);
}
