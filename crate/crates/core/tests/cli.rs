mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::data;

fn adnflex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adnflex"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn repeated_runs_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let case = data("two_bus_adn.json");
    let corridor = data("corridor.json");
    for run in ["a", "b"] {
        let prefix = dir.path().join(format!("fr_{run}"));
        let out = adnflex(&["flex", path(&case), "--dtheta", "15", "--out", path(&prefix)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let poly = prefix.with_extension("json");
        let vsm = dir.path().join(format!("vsm_{run}.jsonl"));
        let out = adnflex(&[
            "vsm",
            path(&corridor),
            "--flex",
            "--polygon",
            path(&poly),
            "--out",
            path(&vsm),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let trace = dir.path().join(format!("pv_{run}.csv"));
        let out = adnflex(&["pv-curve", path(&data("lossless_2bus.json")), "--out", path(&trace)]);
        assert!(out.status.success());
    }
    for (a, b) in [
        ("fr_a.json", "fr_b.json"),
        ("fr_a.csv", "fr_b.csv"),
        ("vsm_a.jsonl", "vsm_b.jsonl"),
        ("pv_a.csv", "pv_b.csv"),
    ] {
        let (x, y) = (fs::read(dir.path().join(a)).unwrap(), fs::read(dir.path().join(b)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{a} and {b} differ");
    }
}

#[test]
fn json_output_is_machine_readable() {
    let out = adnflex(&["--json", "vsm", path(&data("lossless_2bus.json"))]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let vsm = v["vsm_mw"].as_f64().unwrap();
    assert!((vsm - 275.625).abs() < 0.5, "{vsm}");
}

#[test]
fn exit_codes_follow_error_classes() {
    // usage
    assert_eq!(adnflex(&["flex"]).status.code(), Some(1));
    assert_eq!(adnflex(&["vsm", "/nonexistent.json"]).status.code(), Some(1));
    // outage that islands the load
    let lossless = data("lossless_2bus.json");
    assert_eq!(adnflex(&["vsm", path(&lossless), "--contingency", "l"]).status.code(), Some(3));
    // outage leaving a base case the solver cannot converge
    let mesh = data("mesh5.json");
    assert_eq!(adnflex(&["vsm", path(&mesh), "--contingency", "2-4"]).status.code(), Some(2));
    // screening reports failures per line and succeeds
    let out = adnflex(&["vsm", path(&mesh), "--contingency", "all"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 7);
}

#[test]
fn track_and_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let case = data("two_bus_adn.json");
    let track = dir.path().join("track.json");
    let out = adnflex(&["track", path(&case), "--pref", "5", "--qref", "-30", "--delta", "--out", path(&track)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t: serde_json::Value = serde_json::from_slice(&fs::read(&track).unwrap()).unwrap();
    assert!(t["distance"].as_f64().unwrap() < 1e-3);
    let sched = dir.path().join("sched.json");
    fs::write(&sched, r#"{"ltc": {"v_set": 0.97, "deadband_half": 0.01}}"#).unwrap();
    let csv = dir.path().join("trace.csv");
    let out = adnflex(&["simulate", path(&case), "--schedule", path(&sched), "--out", path(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t_s,tap,V_d,V_g@g1,P_g@g1,Q_g@g1,P_j,Q_j"));
    assert!(text.lines().count() > 2);
}
