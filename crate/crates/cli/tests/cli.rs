use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use apdsim::{ApdParams, Coupling};
use serde_json::Value;
use tempfile::TempDir;

fn apdsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apdsim"))
        .args(args)
        .env_remove("APDSIM_SEED")
        .output()
        .expect("spawn apdsim")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &TempDir, name: &str, contents: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn correct_config() -> ApdParams {
    ApdParams {
        r_bias: 0.0,
        discrimination_level: 0.040,
        coupling: Coupling::Dc,
        acceptance_window: 0.8e-9,
        ..ApdParams::apd1()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&apdsim(&["--help"])), 0);
    assert_eq!(code(&apdsim(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&apdsim(&[])), 1);
    assert_eq!(code(&apdsim(&["sweep", "--params", "apd1"])), 1);
    assert_eq!(code(&apdsim(&["frobnicate"])), 1);
}

#[test]
fn audit_flags_the_vulnerable_profile() {
    let out = apdsim(&["audit", "--params", "apd1"]);
    assert_eq!(code(&out), 2);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], false);
    assert!(!report["violations"].as_array().unwrap().is_empty());
}

#[test]
fn audit_passes_the_correct_config() {
    let dir = TempDir::new().unwrap();
    let params = write(&dir, "ok.json", &correct_config().to_json());
    let out = apdsim(&["audit", "--params", s(&params)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn audit_limits_are_adjustable() {
    let out = apdsim(&["audit", "--params", "apd1", "--rbias-max", "1e6", "--headroom", "2"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn malformed_params_exit_one() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", "{\"r_bias\": ");
    assert_eq!(code(&apdsim(&["audit", "--params", s(&bad)])), 1);
    let unknown = write(&dir, "unknown.json", "{\"not_a_field\": 1}");
    assert_eq!(code(&apdsim(&["audit", "--params", s(&unknown)])), 1);
    assert_eq!(code(&apdsim(&["audit", "--params", "/nonexistent/params.json"])), 1);
}

#[test]
fn sweep_rejects_inverted_range_naming_the_flag() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("s.csv");
    let out = apdsim(&[
        "sweep", "--params", "apd1", "--variable", "power", "--min", "1e-3", "--max", "1e-6", "--points", "5",
        "--out", s(&out_path),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--min"));
    assert!(!out_path.exists());
}

#[test]
fn sweep_writes_csv_and_manifest_reproducibly() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out_path = dir.path().join(name);
        let out = apdsim(&[
            "sweep", "--params", "apd1", "--variable", "power", "--min", "1e-9", "--max", "1e-4", "--points",
            "6", "--gates", "20000", "--seed", "7", "--out", s(&out_path),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_path
    };
    let a = run("a.csv");
    let b = run("b.csv");
    let csv = fs::read_to_string(&a).unwrap();
    assert_eq!(csv, fs::read_to_string(&b).unwrap());
    assert!(csv.starts_with("x_value,count_rate_hz,"));
    assert_eq!(csv.lines().count(), 7);

    let manifest = read_json(&dir.path().join("a.csv.manifest.json"));
    assert_eq!(manifest["command"], "sweep");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["params_file"], "apd1");
    assert!(manifest["arguments"].as_array().unwrap().iter().any(|a| a == "--gates"));
}

#[test]
fn seed_environment_variable_overrides_flag() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("s.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_apdsim"))
        .args([
            "sweep", "--params", "apd2", "--variable", "rbias", "--min", "0", "--max", "1e5", "--points", "2",
            "--gates", "10000", "--seed", "1", "--out", s(&out_path),
        ])
        .env("APDSIM_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&dir.path().join("s.csv.manifest.json"));
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn threads_flag_is_accepted() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("s.csv");
    let out = apdsim(&[
        "--threads", "2", "sweep", "--params", "apd1", "--variable", "power", "--min", "1e-8", "--max", "1e-6",
        "--points", "3", "--gates", "10000", "--out", s(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cw_blinding_fails_against_correct_config() {
    let dir = TempDir::new().unwrap();
    let params = write(&dir, "ok.json", &correct_config().to_json());
    let scenario = write(&dir, "cw.json", r#"{"kind":"CwBlind","cw_power":0.014}"#);
    let report = dir.path().join("r.json");
    let out = apdsim(&["attack", "--params", s(&params), "--scenario", s(&scenario), "--out", s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    assert_eq!(r["attack_success"], false);
    assert_eq!(r["audit_passed"], true);
    assert!(dir.path().join("r.json.manifest.json").exists());
}

#[test]
fn cw_blinding_of_vulnerable_config_is_caught_by_monitor() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "cw.json", r#"{"kind":"CwBlind","cw_power":1e-5}"#);
    let report = dir.path().join("r.json");
    let out = apdsim(&["attack", "--params", "apd1", "--scenario", s(&scenario), "--out", s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    assert_eq!(r["attack_success"], true);
    assert_eq!(r["monitor_alarmed"], true);
    assert_eq!(r["audit_passed"], false);

    let unmonitored = dir.path().join("u.json");
    let out = apdsim(&[
        "attack", "--params", "apd1", "--scenario", s(&scenario), "--no-monitor", "--out", s(&unmonitored),
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(read_json(&unmonitored)["monitor_alarmed"], false);
}

#[test]
fn attack_reports_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "cw.json", r#"{"kind":"CwBlind","cw_power":3e-7}"#);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out_path in [&a, &b] {
        let out = apdsim(&[
            "attack", "--params", "apd1", "--scenario", s(&scenario), "--seed", "5", "--out", s(out_path),
        ]);
        assert!(matches!(code(&out), 0 | 2));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn malformed_scenario_exits_one() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "bad.json", r#"{"kind":"Laser","cw_power":1}"#);
    let out = apdsim(&[
        "attack", "--params", "apd1", "--scenario", s(&scenario), "--out", s(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&out), 1);
    let negative = write(&dir, "neg.json", r#"{"kind":"CwBlind","cw_power":-1}"#);
    let out = apdsim(&[
        "attack", "--params", "apd1", "--scenario", s(&negative), "--out", s(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn calibrate_rejects_empty_anchor_file() {
    let dir = TempDir::new().unwrap();
    let anchors = write(&dir, "anchors.json", "[]");
    let out = apdsim(&[
        "calibrate", "--params", "apd1", "--anchors", s(&anchors), "--out", s(&dir.path().join("fit.json")),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn calibrate_fits_the_reference_anchors() {
    let dir = TempDir::new().unwrap();
    let anchors = write(&dir, "anchors.json", &serde_json::to_string(&apdsim::experiments::Anchor::apd1_set()).unwrap());
    let fit = dir.path().join("fit.json");
    let out = apdsim(&["calibrate", "--params", "apd1", "--anchors", s(&anchors), "--out", s(&fit)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fitted = ApdParams::from_json(&fs::read_to_string(&fit).unwrap()).unwrap();
    fitted.validate().unwrap();
    let report = read_json(&dir.path().join("fit.json.report.json"));
    assert_eq!(report["converged"], true);
    assert!(dir.path().join("fit.json.manifest.json").exists());
}
