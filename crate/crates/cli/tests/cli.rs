use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cpsafe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpsafe"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cpsafe(dir, args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A drained tank: with no inflow the level error never settles.
const DRAIN: &[&str] = &["--plant", "watertank", "--seed", "4"];

fn with(base: &[&str], rest: &[&str]) -> Vec<String> {
    base.iter().chain(rest).map(|s| s.to_string()).collect()
}

fn run(dir: &Path, base: &[&str], rest: &[&str]) -> Output {
    let args = with(base, rest);
    cpsafe(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn run_ok(dir: &Path, base: &[&str], rest: &[&str]) -> String {
    let args = with(base, rest);
    ok(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cpsafe(dir.path(), &["--help"])), 0);
    assert_eq!(code(&cpsafe(dir.path(), &["check", "--help"])), 0);
    assert_eq!(code(&cpsafe(dir.path(), &[])), 1);
    assert_eq!(code(&cpsafe(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&cpsafe(dir.path(), &["collect", "--out", "t", "--traces", "many"])), 1);
    assert_eq!(code(&cpsafe(dir.path(), &["--plant", "boiler", "collect", "--out", "t"])), 1);
    assert_eq!(code(&cpsafe(dir.path(), &["collect", "--out", "t", "--controller", "lqr"])), 1);
    fs::write(dir.path().join("bad.toml"), "[collect]\ntrace = 3\n").unwrap();
    assert_eq!(code(&cpsafe(dir.path(), &["--config", "bad.toml", "collect", "--out", "t"])), 1);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpsafe(dir.path(), &["check", "--model", "missing.json", "--state", "0"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    assert_eq!(code(&cpsafe(dir.path(), &["build", "--traces", "nowhere", "--out", "m.json"])), 2);
}

#[test]
fn single_trace_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(d, DRAIN, &["collect", "--out", "t", "--controller", "constant:0", "--traces", "1"]);
    let mut files: Vec<String> = fs::read_dir(d.join("t"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["manifest.json", "trace_00000.txt"]);
    let manifest = json(&d.join("t/manifest.json"));
    let hash = manifest["config_hash"].as_str().unwrap();
    let trace = fs::read_to_string(d.join("t/trace_00000.txt")).unwrap();
    assert!(trace.contains(hash));

    let built = run_ok(d, DRAIN, &["build", "--traces", "t", "--out", "m.json", "--k", "2"]);
    assert!(built.contains("states"), "{built}");
    let model = json(&d.join("m.json"));
    assert!(!model["model"]["states"].as_array().unwrap().is_empty());
    assert_eq!(model["traces_hash"].as_str(), Some(hash));
    assert!(d.join("m.tra").exists() && d.join("m.lab").exists());
}

#[test]
fn assert_flag_exits_three_when_the_formula_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(d, DRAIN, &["collect", "--out", "t", "--controller", "constant:0", "--traces", "3"]);
    run_ok(d, DRAIN, &["build", "--traces", "t", "--out", "m.json", "--k", "2"]);
    let model = json(&d.join("m.json"));
    let states = model["model"]["states"].as_array().unwrap();
    let start = states.iter().position(|s| s["label"] == "rob=-1").expect("an unsafe state").to_string();
    let danger = r#"P>0.8 [ F<=10 "rob=-1" ]"#;
    let safe = r#"P<=0.2 [ F<=10 "rob=-1" ]"#;
    let at = ["check", "--model", "m.json", "--state", start.as_str(), "--query"];
    let holds = run_ok(d, &at, &[danger, "--assert"]);
    assert!(holds.contains("result holds"), "{holds}");
    assert_eq!(code(&run(d, &at, &[safe, "--assert"])), 3);
    // without --assert a failing formula is only reported
    let reported = run_ok(d, &at, &[safe]);
    assert!(reported.contains("does not hold"));
    assert_eq!(code(&run(d, &[], &["check", "--model", "m.json", "--state", "999"])), 2);
    assert_eq!(code(&run(d, &[], &["check", "--model", "m.json", "--state", "0", "--query", "P>> x"])), 1);
}

#[test]
fn refine_with_infinite_variance_threshold_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tank = &["--plant", "watertank", "--seed", "2"];
    run_ok(d, tank, &["collect", "--out", "t", "--traces", "30", "--controller", "constant:0.4"]);
    run_ok(d, tank, &["build", "--traces", "t", "--out", "m.json", "--k", "2"]);
    run_ok(d, tank, &["refine", "--model", "m.json", "--traces", "t", "--out", "r.json", "--k", "2", "--variance-threshold", "inf"]);
    let (m, r) = (json(&d.join("m.json")), json(&d.join("r.json")));
    for key in ["states", "mdp", "classifiers", "pca", "grid"] {
        assert_eq!(m["model"][key], r["model"][key], "{key}");
    }
    assert_eq!(fs::read(d.join("m.tra")).unwrap(), fs::read(d.join("r.tra")).unwrap());
}

#[test]
fn monitor_that_never_fires_matches_the_ai_controller() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tank = &["--plant", "watertank", "--seed", "5"];
    run_ok(d, tank, &["collect", "--out", "t", "--traces", "20"]);
    run_ok(d, tank, &["build", "--traces", "t", "--out", "m.json", "--k", "2"]);
    let printed = run_ok(
        d,
        tank,
        &[
            "monitor", "--model", "m.json", "--ai", "constant:0.3", "--safety", "pid", "--runs", "4", "--query", "false",
            "--unknown-policy", "ai", "--out", "mon",
        ],
    );
    assert!(printed.contains("overhead"));
    let summary = json(&d.join("mon/summary.json"));
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    for r in runs {
        assert_eq!(r["ai_safety"], r["monitored_safety"]);
        assert_eq!(r["ai_performance"], r["monitored_performance"]);
        assert_eq!(r["switches"], 0);
    }
    assert!(d.join("mon/timing.json").exists());
    assert!(d.join("mon/run_00003.txt").exists());
}

#[test]
fn random_search_falsifies_a_drained_tank_every_time() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let printed = run_ok(
        d,
        DRAIN,
        &["falsify", "--controller", "constant:0", "--algo", "random", "--trials", "5", "--out", "f"],
    );
    assert!(printed.contains("5/5"), "{printed}");
    let results = json(&d.join("f/results.json"));
    assert_eq!(results["rows"][0]["fsr"], 5);
    for t in results["trials"].as_array().unwrap() {
        assert_eq!(t["simulations"], 1);
        assert!(t["replayed_robustness"].as_f64().unwrap() < 0.0);
    }
    // the model-guided search refuses to run without a model
    assert_eq!(code(&run(d, DRAIN, &["falsify", "--controller", "constant:0", "--algo", "mosaic"])), 1);
}

#[test]
fn report_collects_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(d, DRAIN, &["collect", "--out", "t", "--controller", "constant:0", "--traces", "2"]);
    run_ok(d, DRAIN, &["build", "--traces", "t", "--out", "m.json", "--k", "2"]);
    run_ok(d, DRAIN, &["falsify", "--controller", "constant:0", "--algo", "random", "--trials", "2", "--out", "f"]);
    run_ok(d, &[], &["report", "t", "m.json", "f", "--out", "report.md"]);
    let doc = fs::read_to_string(d.join("report.md")).unwrap();
    assert!(doc.starts_with('#'));
    assert!(doc.contains("random"));
    assert_eq!(code(&run(d, &[], &["report", "nothing-here"])), 2);
}

#[test]
fn train_writes_a_loadable_network() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tank = &["--plant", "watertank"];
    run_ok(d, tank, &["train", "--out", "w.txt", "--traces", "3", "--epochs", "2", "--corrupt", "0.1"]);
    let text = fs::read_to_string(d.join("w.txt")).unwrap();
    assert!(text.starts_with("# config_hash="));
    run_ok(d, tank, &["collect", "--out", "t", "--traces", "1", "--controller", "mlp:w.txt"]);
    // an ACC run cannot use a network trained on tank observations
    assert_eq!(code(&run(d, &[], &["collect", "--out", "u", "--traces", "1", "--controller", "mlp:w.txt"])), 2);
}
