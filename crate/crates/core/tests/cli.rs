use std::process::{Command, Output};

use levy_storage::config::fixture;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levy-storage")).args(args).output().expect("binary runs")
}

#[test]
fn fixtures_are_listed() {
    let out = cli(&["fixtures"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 5);
    assert!(text.contains("mm1_pk"));
}

#[test]
fn zero_model_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = cli(&["run", "--fixture", "zero_model", "--no-timestamp", "--out-dir", out_dir]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("test,t,estimate,se,target,z,verdict\n"));
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn mm1_pk_reports_the_analytic_target() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = cli(&["run", "--fixture", "mm1_pk", "--reps", "8", "--horizon", "500", "--out-dir", out_dir]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("# generated_unix="));
    let row = csv.lines().find(|l| l.starts_with("pk_limit,")).expect("pk row");
    let target: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
    assert!((target - 2.0 / 3.0).abs() < 1e-12);
    assert!(String::from_utf8(out.stdout).unwrap().contains("target=0.666667"));
}

#[test]
fn negative_rate_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fixture("mm1_pk").unwrap().json.replacen("\"rate\": 0.5", "\"rate\": -0.5", 1);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, text).unwrap();
    let out = cli(&["run", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("jumps[0].rate"), "{err}");
}

#[test]
fn dump_paths_writes_replication_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(fixture("mm1_martingale").unwrap().json).unwrap();
    cfg["output"] = serde_json::json!({ "dump_paths": true });
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = cli(&["run", path.to_str().unwrap(), "--reps", "4", "--horizon", "10", "--out-dir", out_dir.to_str().unwrap()]);
    assert!(matches!(out.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["paths_rep0.csv", "storage_rep0.csv", "decomposition_rep0.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn unknown_fixture_fails() {
    let out = cli(&["show-fixture", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}
