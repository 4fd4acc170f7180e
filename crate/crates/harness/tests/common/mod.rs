#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_rational::Ratio;
use serde_json::Value;

use entailscope_core::archive::{DatasetRef, SampleRef};
use entailscope_core::dataset::DatasetStore;
use entailscope_core::metrics::{EntailmentMode, Percent, Score};
use entailscope_core::{AnnotationRecord, Attribution, BinaryVerdict, MethodId, ReasoningTrace, SubClaimRecord};
use entailscope_gateway::{Gateway, ResponseCache};
use entailscope_harness::config::Config;
use entailscope_harness::experiment::{run_experiment, RunOutcome, RunSpec};
use entailscope_harness::report::{parse_cells, AccuracyCell};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn read_jsonl(rel: &str) -> Vec<serde_json::Value> {
    std::fs::read_to_string(fixture(rel))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// The e2e config with its store moved under `root`.
pub fn e2e_config(root: &Path) -> Config {
    let mut config = Config::load(&fixture("e2e/entailscope.toml")).unwrap();
    config.store = root.join("store");
    config.runs = root.join("runs");
    config
}

pub fn e2e_spec(config: &Config, run_id: &str) -> RunSpec {
    let store = DatasetStore::new(&config.store);
    if store.load("e2e").is_err() {
        store.ingest("e2e", &fixture("e2e/dataset.jsonl")).unwrap();
    }
    let dataset = store.load("e2e").unwrap();
    let instances = dataset.balanced_sample(config.n_per_class, config.seed).unwrap();
    RunSpec {
        run_id: run_id.to_string(),
        method: MethodId::Clatter,
        model: config.model("scripted").unwrap(),
        cot: false,
        dataset: DatasetRef {
            name: dataset.manifest.name.clone(),
            source_digest: dataset.manifest.source_digest.clone(),
        },
        sample: SampleRef::of(&instances, Some(config.n_per_class), Some(config.seed)),
        instances,
    }
}

pub fn gateway_with_cache(config: &Config, cache: &Path) -> Gateway {
    config
        .gateway()
        .unwrap()
        .with_cache(Arc::new(ResponseCache::open(cache).unwrap()))
}

pub async fn run_e2e(config: &Config, gateway: &Gateway, run_id: &str, dir: &Path) -> RunOutcome {
    let spec = e2e_spec(config, run_id);
    run_experiment(
        gateway,
        &config.templates().unwrap(),
        &config.parser().unwrap(),
        &spec,
        dir,
    )
    .await
    .unwrap()
}

pub struct Case {
    pub id: String,
    pub trace: ReasoningTrace,
    pub annotation: AnnotationRecord,
    pub mode: EntailmentMode,
    pub expected: Value,
}

pub fn parse<T: serde::de::DeserializeOwned>(v: &Value) -> T {
    serde_json::from_value(v.clone()).unwrap()
}

pub fn metric_cases() -> Vec<Case> {
    read_jsonl("metrics.jsonl")
        .into_iter()
        .map(|v| {
            let sub_claims = v["sub_claims"]
                .as_array()
                .unwrap()
                .iter()
                .map(|s| SubClaimRecord {
                    text: s["text"].as_str().unwrap().into(),
                    attribution: s["evidence"].as_str().map(Attribution::new),
                    label: parse(&s["label"]),
                })
                .collect();
            let verdict: Option<BinaryVerdict> = parse(&v["verdict"]);
            let method: MethodId = parse(&v["method"]);
            let a = &v["annotation"];
            Case {
                id: v["id"].as_str().unwrap().into(),
                trace: ReasoningTrace::new(sub_claims, verdict, "", None, method),
                annotation: AnnotationRecord {
                    trace_id: format!("fixtures:{}", v["id"].as_str().unwrap()),
                    annotator_id: "a1".into(),
                    sound_flags: parse(&a["sound_flags"]),
                    complete: parse(&a["complete"]),
                    attribution_flags: parse(&a["attribution_flags"]),
                    gold_sub_labels: parse(&a["gold_sub_labels"]),
                    timestamp: String::new(),
                },
                mode: parse(&v["mode"]),
                expected: v["expected"].clone(),
            }
        })
        .collect()
}

pub fn ratio(v: &Value) -> Option<Score> {
    v.as_str().map(|s| match s.split_once('/') {
        Some((n, d)) => Ratio::new(n.parse().unwrap(), d.parse().unwrap()),
        None => Ratio::from_integer(s.parse().unwrap()),
    })
}

pub fn cells(rel: &str) -> Vec<AccuracyCell> {
    parse_cells(&std::fs::read_to_string(fixture(rel)).unwrap()).unwrap()
}

pub fn pct(s: &str) -> Percent {
    s.parse().unwrap()
}

pub fn within(actual: Percent, printed: &str, tol_hundredths: i64) -> bool {
    let diff = (actual - pct(printed)).value();
    let tol = Ratio::new(tol_hundredths, 100);
    -tol <= diff && diff <= tol
}
