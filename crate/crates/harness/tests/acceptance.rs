mod common;

use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use serde_json::Value;

use entailscope_core::archive::RunDir;
use entailscope_core::dataset::Dataset;
use entailscope_core::metrics::TraceScores;
use entailscope_core::parser::{adapt_qa_trace, extract_trace, extract_verdict};
use entailscope_core::{aggregate, BinaryVerdict, EntailmentLabel, MethodId, ParseStatus};
use entailscope_harness::report::{average_report, delta_report};

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn aggregation_oracle() -> Outcome {
    let labels = [EntailmentLabel::Entailed, EntailmentLabel::Neutral, EntailmentLabel::Contradicted];
    let start = Instant::now();
    let mut cases = 0usize;
    let mut up_to_seven = 0usize;
    let mut mismatches = 0usize;
    for n in 1..=8u32 {
        for code in 0..3usize.pow(n) {
            let v: Vec<EntailmentLabel> = (0..n).map(|i| labels[code / 3usize.pow(i) % 3]).collect();
            let brute = if v.iter().any(|l| *l != EntailmentLabel::Entailed) {
                BinaryVerdict::NotSupported
            } else {
                BinaryVerdict::Supported
            };
            cases += 1;
            if n <= 7 {
                up_to_seven += 1;
            }
            if aggregate(&v) != Ok(brute) {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        cases == 9840 && up_to_seven == 3279 && mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("{cases} cases for n = 1..8 ({up_to_seven} for n = 1..7), {mismatches} mismatches, {elapsed:?} (limit 1s)"),
    )
}

fn metric_formulas() -> Outcome {
    let cases = metric_cases();
    let mut wrong = Vec::new();
    for c in &cases {
        let s = TraceScores::score(&c.trace, &c.annotation, c.mode).map_err(|e| format!("{}: {e}", c.id))?;
        let e = &c.expected;
        let exact = s.atomicity == e["atomicity"].as_i64()
            && s.soundness == ratio(&e["soundness"])
            && s.completeness == ratio(&e["completeness"])
            && s.attribution == ratio(&e["attribution"])
            && s.entailment == ratio(&e["entailment"])
            && s.aggregation == ratio(&e["aggregation"]);
        if !exact {
            wrong.push(c.id.clone());
        }
    }
    let m08 = cases.iter().find(|c| c.id == "m08").ok_or("m08 missing")?;
    let credit = TraceScores::score(&m08.trace, &m08.annotation, m08.mode)
        .map(|s| s.attribution == Some(Ratio::from_integer(1)))
        .unwrap_or(false);
    check(
        cases.len() == 25 && wrong.is_empty() && credit,
        format!("{} fixtures, inexact {wrong:?}, neutral-no-attribution full credit {credit}", cases.len()),
    )
}

fn table1_deltas() -> Outcome {
    let report = delta_report(&cells("tables/table1_cells.jsonl"), MethodId::Baseline, MethodId::Clatter)
        .map_err(|e| e.to_string())?;
    let mut checked = 0;
    let mut off = Vec::new();
    for printed in read_jsonl("tables/table1_printed.jsonl") {
        let delta = printed["delta"].as_str().unwrap();
        let actual = if let Some(family) = printed["family"].as_str() {
            report.families.iter().find(|(f, _)| f == family).and_then(|(_, m)| *m)
        } else {
            let model = printed["model"].as_str().unwrap();
            let row = report.rows.iter().find(|r| r.model == model).ok_or(format!("no row {model}"))?;
            match printed["dataset"].as_str() {
                Some(ds) => {
                    let i = report.datasets.iter().position(|d| d == ds).ok_or(format!("no dataset {ds}"))?;
                    row.cells[i].map(|c| c.delta)
                }
                None => row.average,
            }
        };
        checked += 1;
        if !actual.is_some_and(|a| within(a, delta, 1)) {
            off.push(printed.to_string());
        }
    }
    let lrm = report
        .families
        .iter()
        .find(|(f, _)| f == "LRM")
        .and_then(|(_, m)| *m)
        .ok_or("no LRM family")?;
    check(
        off.is_empty() && within(lrm, "3.76", 1),
        format!("{checked} printed deltas within 0.01, off {off:?}, LRM average {}", lrm.fmt_signed()),
    )
}

fn table3_from_table7() -> Outcome {
    let methods = [
        MethodId::Baseline,
        MethodId::AblateDecomp,
        MethodId::Ablate3Way,
        MethodId::AblateAttribution,
    ];
    let t7 = cells("tables/table7_cells.jsonl");
    let report = average_report(&t7, &methods, None).map_err(|e| e.to_string())?;
    let printed = read_jsonl("tables/table3_printed.jsonl");
    let mut off = Vec::new();
    for p in &printed {
        let method: MethodId = p["method"].as_str().unwrap().parse().map_err(|e| format!("{e}"))?;
        let ds = p["dataset"].as_str().unwrap();
        let mean = p["mean"].as_str().unwrap();
        let ok = report
            .cell(method, ds)
            .and_then(|c| c.mean)
            .is_some_and(|m| within(m, mean, 1));
        if !ok {
            off.push(format!("{method}/{ds}"));
        }
    }
    let lfqa = report
        .cell(MethodId::Baseline, "lfqa")
        .and_then(|c| c.mean)
        .map(|m| m.fmt2())
        .unwrap_or_default();
    check(
        t7.len() == 96 && printed.len() == 12 && off.is_empty(),
        format!("{} cells, {} averages within 0.01, off {off:?}, baseline/lfqa {lfqa}", t7.len(), printed.len()),
    )
}

fn balanced_sampling() -> Outcome {
    let mut text = String::new();
    for i in 0..1000 {
        let label = if i % 3 == 0 { "supported" } else { "not_supported" };
        text.push_str(&format!(
            "{{\"id\": \"s{i:04}\", \"doc\": \"document {i}\", \"claim\": \"claim {i}\", \"label\": \"{label}\"}}\n"
        ));
    }
    let report = Dataset::parse("synthetic", text.as_bytes());
    let dataset = report.dataset;
    let start = Instant::now();
    let a = dataset.balanced_sample(250, 1).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let b = dataset.balanced_sample(250, 1).map_err(|e| e.to_string())?;
    let c = dataset.balanced_sample(250, 2).map_err(|e| e.to_string())?;
    let supported = a.iter().filter(|i| i.gold_label == BinaryVerdict::Supported).count();
    let unique: HashSet<&str> = a.iter().map(|i| i.instance_id.as_str()).collect();
    let ids = |v: &[entailscope_core::VerificationInstance]| v.iter().map(|i| i.instance_id.clone()).collect::<Vec<_>>();
    let same = ids(&a) == ids(&b);
    let differ = ids(&a) != ids(&c);
    check(
        supported == 250 && a.len() == 500 && unique.len() == 500 && same && differ && elapsed < Duration::from_millis(100),
        format!(
            "{supported}/{} split, {} unique, same seed identical {same}, other seed differs {differ}, {elapsed:?} (limit 100ms)",
            a.len() - supported,
            unique.len()
        ),
    )
}

fn core_fixtures(name: &str) -> Vec<Value> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name);
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn parser_recall() -> Outcome {
    let verdicts = core_fixtures("verdicts.jsonl");
    let verdict_hits = verdicts
        .iter()
        .filter(|c| extract_verdict(c["response"].as_str().unwrap()) == parse::<Option<BinaryVerdict>>(&c["expected"]))
        .count();
    let guided = core_fixtures("guided.jsonl");
    let guided_full = guided
        .iter()
        .filter(|c| {
            let method: MethodId = parse(&c["method"]);
            let trace = extract_trace(c["response"].as_str().unwrap(), c["thinking"].as_str(), method);
            trace.parse_status() == ParseStatus::Full
        })
        .count();
    let qa = core_fixtures("qa.jsonl");
    let qa_full = qa
        .iter()
        .filter(|c| adapt_qa_trace(c["response"].as_str().unwrap()).parse_status() == ParseStatus::Full)
        .count();
    check(
        verdict_hits == 30 && verdicts.len() == 30 && guided_full == 10 && guided.len() == 10 && qa_full == 5 && qa.len() == 5,
        format!(
            "verdicts {verdict_hits}/{}, guided full {guided_full}/{}, qa full {qa_full}/{}",
            verdicts.len(),
            guided.len(),
            qa.len()
        ),
    )
}

async fn hermetic_e2e() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = e2e_config(tmp.path());
    let cache = tmp.path().join("cache.jsonl");
    let expected: Value = serde_json::from_str(&fs::read_to_string(fixture("e2e/expected.json")).unwrap()).unwrap();
    let start = Instant::now();

    let first = tmp.path().join("first");
    let cold = run_e2e(&config, &gateway_with_cache(&config, &cache), "acc", &first).await;
    let accuracy = cold.summary.accuracy.map(|a| a.fmt2()).unwrap_or_default();

    let rows = fs::read_to_string(first.join("rows.jsonl")).map_err(|e| e.to_string())?;
    let kept: String = rows.lines().take(10).map(|l| format!("{l}\n")).collect();
    fs::write(first.join("rows.jsonl"), kept).map_err(|e| e.to_string())?;
    let resumed = run_e2e(&config, &gateway_with_cache(&config, &cache), "acc", &first).await;

    let second = tmp.path().join("second");
    let warm = run_e2e(&config, &gateway_with_cache(&config, &cache), "acc", &second).await;
    let identical = fs::read(first.join("rows.jsonl")).ok() == fs::read(second.join("rows.jsonl")).ok();
    let elapsed = start.elapsed();

    check(
        accuracy == expected["accuracy"].as_str().unwrap()
            && resumed.processed == 10
            && resumed.summary == cold.summary
            && warm.backend_calls == 0
            && identical
            && elapsed < Duration::from_secs(5),
        format!(
            "accuracy {accuracy} (hand-scored {}), resume processed {}, warm calls {}, rows identical {identical}, {elapsed:?} (limit 5s)",
            expected["accuracy"], resumed.processed, warm.backend_calls
        ),
    )
}

async fn non_reproducibility() -> Outcome {
    let readme = fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../README.md"))
        .map_err(|e| format!("README: {e}"))?;
    let disclosed = readme.contains("are not reproducible");

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = e2e_config(tmp.path());
    let dir = tmp.path().join("smoke");
    run_e2e(&config, &gateway_with_cache(&config, &dir.join("cache.jsonl")), "smoke", &dir).await;
    let rows = RunDir::open(&dir).and_then(|d| d.rows()).map_err(|e| e.to_string())?;
    let extracted = rows.iter().filter(|r| r.verdict.is_some()).count();
    let rate = Ratio::new(extracted as i64, rows.len() as i64);
    check(
        disclosed && rows.len() == 20 && rate >= Ratio::new(95, 100),
        format!(
            "README disclosure {disclosed}, verdict extraction {extracted}/{} (minimum 95%)",
            rows.len()
        ),
    )
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    let results = vec![
        ("aggregation oracle equivalence", aggregation_oracle()),
        ("metric formula suite", metric_formulas()),
        ("table 1 delta arithmetic", table1_deltas()),
        ("table 3 from table 7", table3_from_table7()),
        ("balanced sampling", balanced_sampling()),
        ("parser fixture recall", parser_recall()),
        ("hermetic end-to-end", hermetic_e2e().await),
        ("non-reproducibility disclosure", non_reproducibility().await),
    ];
    let mut failed = Vec::new();
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(*name);
            }
        }
    }
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if failed.is_empty() {
        std::process::ExitCode::SUCCESS
    } else {
        std::process::ExitCode::FAILURE
    }
}
