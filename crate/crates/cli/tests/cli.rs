use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn requery(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_requery")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = requery(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn error_record(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).expect("stderr is a JSON error record")
}

fn gen(dir: &Path, preset: &str, extra: &[&str]) -> String {
    let out = dir.join(format!("gen-{preset}"));
    let mut args = vec!["gen", "--preset", preset, "--out", out.to_str().unwrap()];
    args.extend(extra);
    ok(&args);
    out.join("benchmark.jsonl").display().to_string()
}

#[test]
fn easy_preset_is_fully_solvable() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = gen(tmp.path(), "easy", &[]);
    let out = tmp.path().join("acc");
    ok(&["accuracy", "--benchmark", &bench, "--out", out.to_str().unwrap()]);
    let table = json(&out.join("accuracy.json"));
    let best = table["reports"].as_array().unwrap().iter().find(|r| r["mode"] == "per-object-best").unwrap();
    assert_eq!(best["mean"], 100.0);
}

#[test]
fn single_trial_has_zero_standard_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = gen(tmp.path(), "paper-shape", &["--seed", "2"]);
    let out = tmp.path().join("amae");
    ok(&["amae", "--benchmark", &bench, "--trials", "1", "--out", out.to_str().unwrap()]);
    let summary = json(&out.join("amae_summary.json"));
    assert_eq!(summary["amae"]["standard_error"], 0.0);
    assert_eq!(summary["trials"], 1);
    let csv = std::fs::read_to_string(out.join("amae_curve.csv")).unwrap();
    assert!(csv.starts_with("coverage,value\n1.000000,"));
    assert_eq!(csv.lines().count(), 300 + 2);
}

#[test]
fn combined_on_direct_predictions_is_a_capability_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = gen(tmp.path(), "easy", &["--direct"]);
    let out = tmp.path().join("armae");
    let res = requery(&[
        "armae",
        "--benchmark",
        &bench,
        "--selection",
        "combined",
        "--measure",
        "softmax",
        "--out",
        out.to_str().unwrap(),
    ]);
    let err = error_record(&res);
    assert_eq!(err["error"]["kind"], "capability");
    assert!(err["error"]["message"].as_str().unwrap().contains("direct prediction"));
    assert!(!out.join("manifest.json").exists());

    // smart replacement with the scalar confidence is supported
    ok(&[
        "armae",
        "--benchmark",
        &bench,
        "--selection",
        "smart",
        "--measure",
        "softmax",
        "--trials",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
}

#[test]
fn converge_reports_unsupported_policies_per_row() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = gen(tmp.path(), "easy", &["--direct"]);
    let out = tmp.path().join("conv");
    ok(&["converge", "--benchmark", &bench, "--measure", "softmax", "--out", out.to_str().unwrap()]);
    let rows = json(&out.join("converge.json"))["rows"].clone();
    assert_eq!(rows[0]["selection"], "none");
    assert!(rows[1]["accuracy"].is_number());
    assert_eq!(rows[2]["error"]["kind"], "capability");
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("env-out");
    let status = Command::new(env!("CARGO_BIN_EXE_requery"))
        .args(["gen", "--preset", "easy"])
        .env("REQUERY_OUT_DIR", &out)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn crossover_from_two_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = gen(tmp.path(), "spread", &[]);
    let dir = |n: &str| tmp.path().join(n).display().to_string();
    ok(&["armae", "--benchmark", &bench, "--selection", "combined", "--trials", "5", "--out", &dir("c")]);
    ok(&["armae", "--benchmark", &bench, "--selection", "smart", "--trials", "5", "--out", &dir("s")]);
    ok(&["crossover", "--combined", &dir("c"), "--smart", &dir("s"), "--out", &dir("x")]);
    let table = json(&tmp.path().join("x/crossover.json"));
    assert_eq!(table["grid_size"], 200);
    assert_eq!(table["rows"].as_array().unwrap().len(), 201);

    let swapped = requery(&["crossover", "--combined", &dir("s"), "--smart", &dir("c"), "--out", &dir("y")]);
    assert_eq!(error_record(&swapped)["error"]["kind"], "input");
}

#[test]
fn replay_rejects_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = gen(tmp.path(), "easy", &[]);
    let out = tmp.path().join("acc");
    ok(&["accuracy", "--benchmark", &bench, "--out", out.to_str().unwrap()]);
    let manifest = out.join("manifest.json");
    let again = tmp.path().join("again");
    ok(&["replay", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(std::fs::read(out.join("accuracy.json")).unwrap(), std::fs::read(again.join("accuracy.json")).unwrap());

    let mut bytes = std::fs::read(&bench).unwrap();
    bytes.extend_from_slice(b"\n");
    std::fs::write(&bench, bytes).unwrap();
    let res = requery(&["replay", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(error_record(&res)["error"]["message"].as_str().unwrap().contains("changed"));
}

#[test]
fn bad_flags_and_inputs_produce_error_records() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let res = requery(&["amae", "--benchmark", "x.jsonl", "--measure", "bogus", "--out", out.to_str().unwrap()]);
    assert_eq!(error_record(&res)["error"]["kind"], "usage");

    let res = requery(&["amae", "--benchmark", "/definitely/missing.jsonl", "--out", out.to_str().unwrap()]);
    assert_eq!(error_record(&res)["error"]["kind"], "io");

    let broken = tmp.path().join("broken.jsonl");
    std::fs::write(&broken, "{\"instance_id\": 3}\n").unwrap();
    let res = requery(&["amae", "--benchmark", broken.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(error_record(&res)["error"]["kind"], "parse");

    let bench = gen(tmp.path(), "easy", &[]);
    let res = requery(&["amae", "--benchmark", &bench, "--trials", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(error_record(&res)["error"]["kind"], "input");
}
