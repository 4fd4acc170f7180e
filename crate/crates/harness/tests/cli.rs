mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use common::*;

fn entailscope(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entailscope"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = entailscope(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    for f in ["entailscope.toml", "script.jsonl", "dataset.jsonl"] {
        fs::copy(fixture(&format!("e2e/{f}")), tmp.path().join(f)).unwrap();
    }
    tmp
}

#[test]
fn ingest_sample_run_and_report() {
    let tmp = workspace();
    let dir = tmp.path();

    ok(dir, &["ingest", "e2e", "dataset.jsonl"]);
    ok(dir, &["sample", "e2e", "--out", "ids.txt"]);
    let ids = fs::read_to_string(dir.join("ids.txt")).unwrap();
    assert_eq!(ids.lines().filter(|l| !l.starts_with('#')).count(), 20);

    ok(dir, &[
        "run", "--dataset", "e2e", "--method", "clatter", "--model", "scripted", "--sample", "ids.txt", "--run-id", "cli",
    ]);
    let run = dir.join("runs/cli");
    let summary: Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed"], 20);
    assert_eq!(summary["correct"], 15);

    let text = ok(dir, &["report", "delta", "--cells", fixture("tables/table1_cells.jsonl").to_str().unwrap()]);
    assert!(text.contains("+3.76"));

    let tasks = ok(dir, &["annotate", "export", "--run", "runs/cli"]);
    assert_eq!(tasks.lines().count(), 20);
    let first: Value = serde_json::from_str(tasks.lines().next().unwrap()).unwrap();
    let trace = first["trace_id"].as_str().unwrap();
    let n = first["sub_claims"].as_array().unwrap().len();

    let record = json!({
        "trace_id": trace,
        "annotator_id": "cli",
        "sound_flags": vec![true; n],
        "complete": true,
        "attribution_flags": vec![true; n],
        "gold_sub_labels": vec!["entailed"; n],
    });
    fs::write(dir.join("ann.jsonl"), format!("{record}\n")).unwrap();
    ok(dir, &["annotate", "import", "--run", "runs/cli", "ann.jsonl"]);

    let metrics = ok(dir, &["report", "metrics", "--run", "runs/cli", "--format", "jsonl"]);
    let soundness = metrics
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|v| v["metric"] == "soundness")
        .unwrap();
    assert_eq!(soundness["n"], 1);
    assert_eq!(soundness["mean"], "1.00");
}

#[test]
fn bad_input_is_reported() {
    let tmp = workspace();
    let dir = tmp.path();
    fs::write(dir.join("broken.jsonl"), "{\"id\": \"x\"}\n").unwrap();
    let out = entailscope(dir, &["ingest", "broken", "broken.jsonl"]);
    let all = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    assert!(all.contains("line 1: missing field `doc`"), "{all}");
    assert!(all.contains("1 malformed lines rejected"), "{all}");

    let out = entailscope(dir, &["run", "--dataset", "missing", "--method", "clatter", "--model", "scripted"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let out = entailscope(dir, &["run", "--dataset", "e2e", "--method", "nonsense", "--model", "scripted"]);
    assert!(!out.status.success());
}
