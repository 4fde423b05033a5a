use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stabscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stabscope")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn resolvent_in_two_dimensions_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"potential": {"name": "harmonic", "dim": 2}, "damping": {"name": "constant"}}"#,
    );
    let out = dir.path().join("out");
    let o = stabscope(&["resolvent", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("resolvent scan requires d = 1"));
}

#[test]
fn unknown_config_key_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"potential": {"name": "harmonic", "dim": 1}, "typo": 3}"#);
    let out = dir.path().join("out");
    let o = stabscope(&["flow", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = stabscope(&["flow", "--config", "/nonexistent.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn constant_damping_satisfies_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "potential": {"name": "harmonic", "dim": 2},
            "damping": {"name": "constant"},
            "conditions": {"ugcc_per_axis": 3, "ugcc_directions": 8, "tpc_directions": 256, "dsc_samples": 50}
        }"#,
    );
    let out = dir.path().join("out");
    let o = stabscope(&["conditions", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("conditions.json")).unwrap()).unwrap();
    for key in ["ugcc", "tpc", "dsc"] {
        assert_eq!(summary[key], true, "{summary}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "conditions");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(out.join("ugcc.csv").exists());
}

#[test]
fn flow_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"potential": {"name": "harmonic", "dim": 1}, "flow": {"T_time": 1, "dt_time": 0.01}}"#,
    );
    let out = dir.path().join("out");
    let o = stabscope(&["flow", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 102);
}
