use std::path::PathBuf;
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(name)
}

fn csb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csb")).args(args).env("CSB_LOG", "error").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const OFFERINGS: &str = "data/sample_offerings.json";
const PROFILE: &str = "data/sample_profile.json";

fn paths() -> (String, String) {
    (data(OFFERINGS).display().to_string(), data(PROFILE).display().to_string())
}

#[test]
fn rank_prints_worked_example() {
    let (o, p) = paths();
    let out = csb(&["rank", &o, &p]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).take(4).map(|l| l.split_whitespace().collect()).collect();
    let expect = [
        ["1", "SP4", "0.9185", "0.92", "yes"],
        ["2", "SP3", "0.9080", "0.91", "yes"],
        ["3", "SP1", "0.8820", "0.88", "no"],
        ["4", "SP2", "0.8700", "0.87", "no"],
    ];
    for (row, want) in rows.iter().zip(expect) {
        assert_eq!(row.as_slice(), want);
    }
    assert!(text.contains("threshold 0.9080 (display 0.91)"));
}

#[test]
fn rank_json_and_tier_profile() {
    let (o, _) = paths();
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("gold.json");
    std::fs::write(&profile, r#"{"tier": "gold", "weights": [0.35, 0.15, 0.35, 0.15], "sensitivities": [1, 1, 1, 1]}"#)
        .unwrap();
    let tiers = data("data/tiers.json").display().to_string();
    let out = csb(&["rank", &o, profile.to_str().unwrap(), "--tiers", &tiers, "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let accepted: Vec<bool> =
        v["entries"].as_array().unwrap().iter().map(|e| e["accepted"].as_bool().unwrap()).collect();
    assert_eq!(accepted, [true, true, true, true]);
    assert!((v["threshold"].as_f64().unwrap() - 0.858).abs() < 1e-9);
}

#[test]
fn sweep_emits_155_rows() {
    let (o, p) = paths();
    let out = csb(&["sweep", &o, &p, "--beta-min", "0", "--beta-max", "3", "--beta-step", "0.1"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("beta,subject,utility"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 155);
    let at_zero: Vec<_> = rows.iter().filter(|r| r[0] == "0").collect();
    assert_eq!(at_zero.len(), 5);
    assert!(at_zero.iter().all(|r| r[2] == "1.000000"));
}

#[test]
fn missing_scenario_fails_with_diagnostic() {
    let out = csb(&["scenario", "run", "missing.json"]);
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.json"), "{err}");
}

#[test]
fn bad_inputs_fail() {
    let (o, p) = paths();
    assert!(!csb(&["rank", &p, &o]).status.success());
    assert!(!csb(&["sweep", &o, &p, "--beta-step", "0"]).status.success());
    assert!(!csb(&["frobnicate"]).status.success());
    assert!(!csb(&["report", "usage", "--data-dir", "/nonexistent/csb", "--group", "g", "--from", "0", "--to", "1"])
        .status
        .success());
}

#[test]
fn scenario_run_then_reports_from_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("broker");
    let transcript = dir.path().join("t.jsonl");
    let scenario = data("scenarios/availability_drift.json").display().to_string();
    let out = csb(&[
        "scenario",
        "run",
        &scenario,
        "--data-dir",
        data_dir.to_str().unwrap(),
        "--transcript",
        transcript.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["summary"]["contracts"][0]["violation_count"], 9);
    assert!(std::fs::read_to_string(&transcript).unwrap().lines().count() > 3);

    let dd = data_dir.to_str().unwrap();
    let out = csb(&["report", "compliance", "sla-000001", "--data-dir", dd]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["total_violations"], 9);
    assert_eq!(report["penalty_credit"], 30.0);

    let out = csb(&["report", "usage", "--data-dir", dd, "--group", "languages", "--from", "0", "--to", "10"]);
    let usage: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(usage["total_requests"], 1);
}
