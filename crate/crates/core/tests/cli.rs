use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aecnn::compiler::{ArchitectureDoc, LayerGraph};
use aecnn::engine::Checkpoint;
use aecnn::Genome;

const BIN: &str = env!("CARGO_BIN_EXE_aecnn");

fn aecnn(args: &[&str], out_dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .env("AECNN_OUT_DIR", out_dir)
        .output()
        .unwrap()
}

fn run_dir(out: &Output) -> PathBuf {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run_dir="))
        .unwrap_or_else(|| panic!("no run_dir in {stdout}\n{}", String::from_utf8_lossy(&out.stderr)));
    PathBuf::from(line)
}

fn small(seed: &str) -> Vec<&str> {
    vec!["run", "--seed", seed, "--population", "6", "--generations", "4"]
}

#[test]
fn identical_summary_for_parallel_one_and_four() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = small("7");
    a.extend(["--evaluator", "surrogate:param_budget", "--parallel", "1"]);
    let mut b = small("7");
    b.extend(["--evaluator", "surrogate:param_budget", "--parallel", "4"]);
    let (ra, rb) = (aecnn(&a, tmp.path()), aecnn(&b, tmp.path()));
    assert!(ra.status.success() && rb.status.success());
    let (da, db) = (run_dir(&ra), run_dir(&rb));
    assert_ne!(da, db);
    assert_eq!(
        fs::read(da.join("best/summary.json")).unwrap(),
        fs::read(db.join("best/summary.json")).unwrap()
    );
}

#[test]
fn defaults_recorded_in_summary_and_artifacts_reparse() {
    let tmp = tempfile::tempdir().unwrap();
    let out = aecnn(&["run", "--generations", "2"], tmp.path());
    assert!(out.status.success());
    let dir = run_dir(&out);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("best/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["population"], 20);
    assert_eq!(summary["config"]["operators"]["crossover_prob"], 0.9);
    assert_eq!(summary["config"]["operators"]["mutation_prob"], 0.2);
    assert_eq!(summary["generations"].as_array().unwrap().len(), 3);

    Genome::from_json(&fs::read_to_string(dir.join("best/genome.json")).unwrap()).unwrap();
    let doc =
        ArchitectureDoc::from_json(&fs::read_to_string(dir.join("best/architecture.json")).unwrap()).unwrap();
    LayerGraph::from_document(&doc).unwrap();
    Checkpoint::load(&dir.join("checkpoints/latest.json")).unwrap();
    let lines = fs::read_to_string(dir.join("reports/generations.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["execution"]["parallel"], 1);
}

#[test]
fn odd_population_is_rejected_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let out = aecnn(&["run", "--population", "3"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("population"));
    assert_eq!(fs::read_dir(tmp.path()).map(|d| d.count()).unwrap_or(0), 0);
}

#[test]
fn config_file_and_dotted_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"population": 4, "generations": 1, "seed": 3}"#).unwrap();
    let out = aecnn(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--mutation-prob",
            "0.5",
            "--constraints.max_rbu",
            "2",
            "--surrogate.target_seed=9",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir(&out).join("best/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["population"], 4);
    assert_eq!(summary["config"]["seed"], 3);
    assert_eq!(summary["config"]["operators"]["mutation_prob"], 0.5);
    assert_eq!(summary["config"]["constraints"]["max_rbu"], 2);
    assert_eq!(summary["config"]["surrogate"]["target_seed"], 9);
}

#[test]
fn resume_matches_uninterrupted_and_completed_is_noop() {
    let tmp = tempfile::tempdir().unwrap();
    let out = aecnn(&small("11"), tmp.path());
    let full = run_dir(&out);

    let copy = tmp.path().join("copy");
    fs::create_dir_all(copy.join("checkpoints")).unwrap();
    let ckpt = copy.join("checkpoints/gen-0002.json");
    fs::copy(full.join("checkpoints/gen-0002.json"), &ckpt).unwrap();
    let resumed = aecnn(&["resume", ckpt.to_str().unwrap(), "--parallel", "3"], tmp.path());
    assert!(
        resumed.status.success(),
        "{}",
        String::from_utf8_lossy(&resumed.stderr)
    );
    assert_eq!(
        fs::read(full.join("best/summary.json")).unwrap(),
        fs::read(copy.join("best/summary.json")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(copy.join("reports/generations.jsonl"))
            .unwrap()
            .lines()
            .count(),
        5
    );

    let again = aecnn(
        &["resume", full.join("checkpoints/latest.json").to_str().unwrap()],
        tmp.path(),
    );
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("already complete"));
}

#[test]
fn corrupt_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"version\": 1,").unwrap();
    let out = aecnn(&["resume", bad.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt"));
    let missing = aecnn(&["resume", "/nonexistent/ckpt.json"], tmp.path());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn inspect_reports_counts_and_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.json");
    fs::write(&good, r#"{"units":[{"type":"rbu","amount":1,"in":3,"out":64}]}"#).unwrap();
    let out = aecnn(
        &["inspect", good.to_str().unwrap(), "--format", "json"],
        tmp.path(),
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["valid"], true);
    assert_eq!(v["stats"]["params"], 4218);

    let text = String::from_utf8(aecnn(&["inspect", good.to_str().unwrap()], tmp.path()).stdout).unwrap();
    assert!(text.contains("params 4218"), "{text}");

    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"units":[{"type":"dbu","amount":2,"in":64,"out":160,"k":40}]}"#,
    )
    .unwrap();
    let out = aecnn(
        &["inspect", bad.to_str().unwrap(), "--format", "json"],
        tmp.path(),
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["valid"], false);
    assert!(v["violations"].as_array().unwrap().len() >= 2);

    let dot = aecnn(
        &["inspect", good.to_str().unwrap(), "--export", "dot-graph"],
        tmp.path(),
    );
    assert!(String::from_utf8_lossy(&dot.stdout).starts_with("digraph"));
}

#[test]
fn bench_writes_reproducible_csv_and_rejects_zero_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["bench", "--seeds", "2", "--population", "4", "--generations", "2"];
    let (a, b) = (aecnn(&args, tmp.path()), aecnn(&args, tmp.path()));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let dir = |o: &Output| {
        PathBuf::from(
            String::from_utf8_lossy(&o.stdout)
                .lines()
                .find_map(|l| l.strip_prefix("bench_dir="))
                .unwrap(),
        )
    };
    let (da, db) = (dir(&a), dir(&b));
    assert_eq!(
        fs::read(da.join("curves.csv")).unwrap(),
        fs::read(db.join("curves.csv")).unwrap()
    );
    assert!(fs::read_to_string(da.join("summary.csv"))
        .unwrap()
        .contains("mutation_only"));

    let zero = aecnn(&["bench", "--seeds", "0"], tmp.path());
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn external_evaluator_run_via_mock() {
    let tmp = tempfile::tempdir().unwrap();
    let evaluator = format!("exec:{BIN} mock-evaluator --param-budget 6 --shuffle 2 --oom-above 9");
    let mut args = small("2");
    args.extend(["--evaluator", &evaluator, "--parallel", "3"]);
    let out = aecnn(&args, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir(&out).join("best/summary.json").exists());
}
