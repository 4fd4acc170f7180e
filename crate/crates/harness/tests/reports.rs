mod common;

use num_rational::Ratio;
use proptest::prelude::*;

use entailscope_core::metrics::Percent;
use entailscope_core::MethodId;
use entailscope_harness::report::{average_report, delta_report, AccuracyCell};

use common::*;

#[test]
fn table1_deltas_match_printed_values() {
    let report = delta_report(&cells("tables/table1_cells.jsonl"), MethodId::Baseline, MethodId::Clatter).unwrap();
    assert_eq!(report.rows.len(), 8);
    assert_eq!(report.datasets, ["claimverify", "lfqa", "tofueval"]);
    for printed in read_jsonl("tables/table1_printed.jsonl") {
        let delta = printed["delta"].as_str().unwrap();
        if let Some(family) = printed["family"].as_str() {
            let (_, mean) = report.families.iter().find(|(f, _)| f == family).unwrap();
            assert!(within(mean.unwrap(), delta, 1), "{family} {delta}");
            continue;
        }
        let model = printed["model"].as_str().unwrap();
        let row = report.rows.iter().find(|r| r.model == model).unwrap();
        let actual = match printed["dataset"].as_str() {
            Some(ds) => {
                let i = report.datasets.iter().position(|d| d == ds).unwrap();
                row.cells[i].unwrap().delta
            }
            None => row.average.unwrap(),
        };
        assert!(within(actual, delta, 1), "{model} {:?}: {} vs {delta}", printed["dataset"], actual.fmt_signed());
    }
}

#[test]
fn lrm_family_gain_is_exact() {
    let report = delta_report(&cells("tables/table1_cells.jsonl"), MethodId::Baseline, MethodId::Clatter).unwrap();
    let (_, lrm) = report.families.iter().find(|(f, _)| f == "LRM").unwrap();
    // 45.15 / 12
    assert_eq!(lrm.unwrap().value(), Ratio::new(4515, 1200));
    assert_eq!(lrm.unwrap().fmt2(), "3.76");
    let qwq = report.rows.iter().find(|r| r.model == "QwQ-32B-Preview").unwrap();
    assert_eq!(qwq.average.unwrap().value(), Ratio::new(1718, 300));
}

#[test]
fn table3_from_table7() {
    let methods = [
        MethodId::Baseline,
        MethodId::AblateDecomp,
        MethodId::Ablate3Way,
        MethodId::AblateAttribution,
    ];
    let t7 = cells("tables/table7_cells.jsonl");
    assert_eq!(t7.len(), 96);
    let report = average_report(&t7, &methods, None).unwrap();
    assert!(report.gaps.is_empty());
    let printed = read_jsonl("tables/table3_printed.jsonl");
    assert_eq!(printed.len(), 12);
    for p in printed {
        let method: MethodId = p["method"].as_str().unwrap().parse().unwrap();
        let ds = p["dataset"].as_str().unwrap();
        let cell = report.cell(method, ds).unwrap();
        assert_eq!(cell.models, 8);
        let mean = p["mean"].as_str().unwrap();
        assert!(within(cell.mean.unwrap(), mean, 1), "{method} {ds}");
        assert_eq!(cell.mean.unwrap().fmt2(), mean, "{method} {ds}");
    }
}

#[test]
fn table2_lrm_averages_and_overall() {
    let methods = [MethodId::Baseline, MethodId::QaBased, MethodId::Clatter];
    let report = average_report(&cells("tables/table2_cells.jsonl"), &methods, Some("LRM")).unwrap();
    for p in read_jsonl("tables/table2_printed.jsonl") {
        let method: MethodId = p["method"].as_str().unwrap().parse().unwrap();
        let mean = p["mean"].as_str().unwrap();
        let actual = match p["dataset"].as_str() {
            Some(ds) => {
                let cell = report.cell(method, ds).unwrap();
                assert_eq!(cell.models, 4);
                cell.mean.unwrap()
            }
            None => report.overall[methods.iter().position(|m| *m == method).unwrap()].unwrap(),
        };
        assert!(within(actual, mean, 1), "{method} {:?}", p["dataset"]);
    }
}

#[test]
fn reports_are_deterministic() {
    let c = cells("tables/table1_cells.jsonl");
    let a = delta_report(&c, MethodId::Baseline, MethodId::Clatter).unwrap();
    let b = delta_report(&c, MethodId::Baseline, MethodId::Clatter).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    let text = a.to_text();
    assert!(text.contains("QwQ-32B-Preview"));
    assert!(text.contains("+3.76"));
    assert!(text.contains("-0.80"));
    let first = a.to_jsonl().lines().next().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["delta"], "+3.40");
}

#[test]
fn missing_cells_are_gaps_not_zeros() {
    let mut t7 = cells("tables/table7_cells.jsonl");
    t7.retain(|c| !(c.model == "O4-mini" && c.method == MethodId::Ablate3Way && c.dataset == "lfqa"));
    let report = average_report(&t7, &[MethodId::Baseline, MethodId::Ablate3Way], None).unwrap();
    let cell = report.cell(MethodId::Ablate3Way, "lfqa").unwrap();
    assert_eq!(cell.models, 7);
    // (79.50 * 8 - 87) / 7
    assert_eq!(cell.mean.unwrap().value(), Ratio::new(636 - 87, 7));
    assert_eq!(report.gaps.len(), 1);
    assert!(report.to_text().contains("gap: O4-mini has no ablate_3way result on lfqa"));

    let mut t1 = cells("tables/table1_cells.jsonl");
    t1.retain(|c| !(c.model == "O4-mini" && c.method == MethodId::Clatter && c.dataset == "tofueval"));
    let d = delta_report(&t1, MethodId::Baseline, MethodId::Clatter).unwrap();
    let row = d.rows.iter().find(|r| r.model == "O4-mini").unwrap();
    assert!(row.cells[2].is_none());
    assert!(row.average.is_none());
    let (_, lrm) = d.families.iter().find(|(f, _)| f == "LRM").unwrap();
    // mean over the three complete LRM rows only
    assert_eq!(lrm.unwrap().value(), Ratio::new(1718 + 1557 + 300, 900));
}

fn arb_cells() -> impl Strategy<Value = Vec<AccuracyCell>> {
    prop::collection::vec((0i64..=10000, 0i64..=10000, any::<bool>()), 1..6).prop_map(|models| {
        let mut out = Vec::new();
        for (i, (b, t, lrm)) in models.into_iter().enumerate() {
            for (method, acc) in [(MethodId::Baseline, b), (MethodId::Clatter, t)] {
                out.push(AccuracyCell {
                    model: format!("m{i}"),
                    family: if lrm { "LRM" } else { "LLM" }.into(),
                    dataset: "d".into(),
                    method,
                    accuracy: Percent::new(Ratio::new(acc, 100)),
                });
            }
        }
        out
    })
}

proptest! {
    #[test]
    fn delta_is_antisymmetric(cells in arb_cells()) {
        let ab = delta_report(&cells, MethodId::Baseline, MethodId::Clatter).unwrap();
        let ba = delta_report(&cells, MethodId::Clatter, MethodId::Baseline).unwrap();
        for (x, y) in ab.rows.iter().zip(&ba.rows) {
            prop_assert_eq!(x.average.map(|v| -v), y.average);
            prop_assert_eq!(x.cells[0].unwrap().delta, -y.cells[0].unwrap().delta);
        }
        for ((_, x), (_, y)) in ab.families.iter().zip(&ba.families) {
            prop_assert_eq!(x.map(|v| -v), *y);
        }
        let same = delta_report(&cells, MethodId::Baseline, MethodId::Baseline).unwrap();
        prop_assert!(same.rows.iter().all(|r| r.average == Some(Percent::zero())));
    }

    #[test]
    fn averages_ignore_input_order(cells in arb_cells(), seed in any::<u64>()) {
        let mut shuffled = cells.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed as usize).wrapping_mul(i + 7) % (i + 1));
        }
        let a = average_report(&cells, &[MethodId::Baseline, MethodId::Clatter], None).unwrap();
        let b = average_report(&shuffled, &[MethodId::Baseline, MethodId::Clatter], None).unwrap();
        prop_assert_eq!(a.cells, b.cells);
        prop_assert_eq!(a.overall, b.overall);
    }
}
