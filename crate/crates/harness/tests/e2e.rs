mod common;

use std::fs;

use proptest::prelude::*;

use entailscope_core::archive::{RowStatus, RunDir, RunRow, RunSummary};
use entailscope_core::{BinaryVerdict, ParseStatus};
use entailscope_gateway::{MockBackend, MockFailure, MockRule};
use entailscope_harness::experiment::run_experiment;

use common::*;

#[tokio::test]
async fn scripted_run_matches_hand_scoring() {
    let tmp = tempfile::tempdir().unwrap();
    let config = e2e_config(tmp.path());
    let dir = tmp.path().join("run-a");
    let gw = gateway_with_cache(&config, &dir.join("cache.jsonl"));
    let outcome = run_e2e(&config, &gw, "e2e-clatter", &dir).await;

    let expected: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixture("e2e/expected.json")).unwrap()).unwrap();
    let s = &outcome.summary;
    assert_eq!(s.instances, 20);
    assert_eq!(s.completed, 20);
    assert_eq!(s.skipped, 0);
    assert_eq!(s.parse_failures, 0);
    assert_eq!(s.correct, 15);
    assert_eq!(s.disagreements, 2);
    assert_eq!(s.accuracy.unwrap().fmt2(), expected["accuracy"].as_str().unwrap());
    assert!(!s.degraded);
    // twenty prompts plus two transient failures on one of them
    assert_eq!(outcome.backend_calls, 22);

    let rows = RunDir::open(&dir).unwrap().rows().unwrap();
    let mut wrong: Vec<&str> = rows.iter().filter(|r| !r.is_correct()).map(|r| r.instance_id.as_str()).collect();
    wrong.sort();
    assert_eq!(wrong, ["e04", "e08", "e13", "e16", "e20"]);
    let mut disagreeing: Vec<&str> = rows.iter().filter(|r| r.disagreement).map(|r| r.instance_id.as_str()).collect();
    disagreeing.sort();
    assert_eq!(disagreeing, ["e18", "e20"]);
    let full = rows.iter().filter(|r| r.parse_status == Some(ParseStatus::Full)).count();
    assert_eq!(full, 15);
    let retried = rows.iter().find(|r| r.instance_id == "e03").unwrap();
    assert_eq!(retried.attempts, Some(3));

    let e18 = rows.iter().find(|r| r.instance_id == "e18").unwrap();
    assert_eq!(e18.verdict, Some(BinaryVerdict::NotSupported));
    assert_eq!(e18.aggregated_verdict, Some(BinaryVerdict::Supported));
}

#[tokio::test]
async fn rerun_in_same_directory_makes_no_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let config = e2e_config(tmp.path());
    let dir = tmp.path().join("run");
    let gw = gateway_with_cache(&config, &dir.join("cache.jsonl"));
    run_e2e(&config, &gw, "r", &dir).await;
    let rows_before = fs::read(dir.join("rows.jsonl")).unwrap();

    let gw = gateway_with_cache(&config, &dir.join("cache.jsonl"));
    let again = run_e2e(&config, &gw, "r", &dir).await;
    assert_eq!(again.processed, 0);
    assert_eq!(again.backend_calls, 0);
    assert_eq!(fs::read(dir.join("rows.jsonl")).unwrap(), rows_before);
}

#[tokio::test]
async fn warm_cache_in_fresh_directory_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = e2e_config(tmp.path());
    let cache = tmp.path().join("shared-cache.jsonl");
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");

    let gw = gateway_with_cache(&config, &cache);
    run_e2e(&config, &gw, "same", &first).await;

    let gw = gateway_with_cache(&config, &cache);
    let warm = run_e2e(&config, &gw, "same", &second).await;
    assert_eq!(warm.backend_calls, 0);
    assert_eq!(warm.processed, 20);
    for file in ["rows.jsonl", "summary.json", "meta.json", "instances.jsonl"] {
        assert_eq!(
            fs::read(first.join(file)).unwrap(),
            fs::read(second.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[tokio::test]
async fn interrupted_run_resumes_where_it_stopped() {
    let tmp = tempfile::tempdir().unwrap();
    let config = e2e_config(tmp.path());
    let dir = tmp.path().join("run");
    let cache = dir.join("cache.jsonl");
    let gw = gateway_with_cache(&config, &cache);
    let full = run_e2e(&config, &gw, "r", &dir).await;

    let text = fs::read_to_string(dir.join("rows.jsonl")).unwrap();
    let kept: String = text.lines().take(7).map(|l| format!("{l}\n")).collect();
    fs::write(dir.join("rows.jsonl"), kept).unwrap();
    fs::remove_file(dir.join("summary.json")).unwrap();

    let gw = gateway_with_cache(&config, &cache);
    let resumed = run_e2e(&config, &gw, "r", &dir).await;
    assert_eq!(resumed.processed, 13);
    assert_eq!(resumed.backend_calls, 0);
    assert_eq!(resumed.summary, full.summary);
}

#[tokio::test]
async fn run_with_different_sample_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let config = e2e_config(tmp.path());
    let dir = tmp.path().join("run");
    let gw = gateway_with_cache(&config, &dir.join("cache.jsonl"));
    run_e2e(&config, &gw, "r", &dir).await;

    let mut spec = e2e_spec(&config, "r");
    spec.instances.truncate(10);
    spec.sample = entailscope_core::archive::SampleRef::of(&spec.instances, None, None);
    let err = run_experiment(&gw, &config.templates().unwrap(), &config.parser().unwrap(), &spec, &dir).await;
    assert!(err.is_err());
}

#[tokio::test]
async fn provider_failures_become_skipped_rows_and_are_retried() {
    let tmp = tempfile::tempdir().unwrap();
    let config = e2e_config(tmp.path());
    let spec = e2e_spec(&config, "flaky");
    let dir = tmp.path().join("run");

    // every instance answers "yes", except three claims that exhaust retries
    let failing: Vec<&str> = spec.instances.iter().take(3).map(|i| i.claim.as_str()).collect();
    let mut rules: Vec<MockRule> = failing
        .iter()
        .map(|c| MockRule::new(format!("Claim: {c}"), "").erroring(MockFailure::Transient))
        .collect();
    rules.push(MockRule::new("Claim: ", "yes"));
    let gw = config
        .gateway()
        .unwrap()
        .with_backend("mock", std::sync::Arc::new(MockBackend::new(rules)));
    let t = config.templates().unwrap();
    let p = config.parser().unwrap();
    let outcome = run_experiment(&gw, &t, &p, &spec, &dir).await.unwrap();
    assert_eq!(outcome.summary.skipped, 3);
    assert_eq!(outcome.summary.completed, 17);
    assert!(outcome.summary.degraded);
    let rows = RunDir::open(&dir).unwrap().rows().unwrap();
    let skipped: Vec<&RunRow> = rows.iter().filter(|r| r.status == RowStatus::Skipped).collect();
    assert!(skipped.iter().all(|r| r.error.as_deref().unwrap().starts_with("retry_exhausted")));

    let gw = config
        .gateway()
        .unwrap()
        .with_backend("mock", std::sync::Arc::new(MockBackend::constant("yes")));
    let retry = run_experiment(&gw, &t, &p, &spec, &dir).await.unwrap();
    assert_eq!(retry.processed, 3);
    assert_eq!(retry.summary.skipped, 0);
    assert_eq!(retry.summary.completed, 20);
}

fn row(gold: BinaryVerdict, verdict: Option<BinaryVerdict>, skipped: bool) -> RunRow {
    RunRow {
        instance_id: String::new(),
        gold_label: gold,
        prompt_hash: String::new(),
        status: if skipped { RowStatus::Skipped } else { RowStatus::Completed },
        verdict: if skipped { None } else { verdict },
        aggregated_verdict: None,
        disagreement: false,
        parse_status: None,
        response_sha: None,
        thinking_sha: None,
        sub_claims: Vec::new(),
        attempts: None,
        error: None,
    }
}

fn verdict() -> impl Strategy<Value = Option<BinaryVerdict>> {
    prop_oneof![
        Just(None),
        Just(Some(BinaryVerdict::Supported)),
        Just(Some(BinaryVerdict::NotSupported))
    ]
}

fn gold() -> impl Strategy<Value = BinaryVerdict> {
    prop_oneof![Just(BinaryVerdict::Supported), Just(BinaryVerdict::NotSupported)]
}

proptest! {
    // parse failures can only lower headline accuracy
    #[test]
    fn parse_failures_score_conservatively(cases in prop::collection::vec((gold(), verdict(), any::<bool>()), 1..60)) {
        let rows: Vec<RunRow> = cases.iter().map(|(g, v, s)| row(*g, *v, *s)).collect();
        let s = RunSummary::from_rows(&rows);
        if let (Some(headline), Some(parsed)) = (s.accuracy, s.accuracy_parsed) {
            prop_assert!(headline <= parsed);
        }
        let completed = rows.iter().filter(|r| r.status == RowStatus::Completed).count();
        prop_assert_eq!(s.completed, completed);
        prop_assert_eq!(s.completed + s.skipped, rows.len());
        prop_assert!(s.correct + s.parse_failures <= s.completed);
    }
}
