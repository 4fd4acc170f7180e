//! Report tables. Every report renders as aligned plain text and as JSON
//! lines; the same input always yields byte-identical output.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use entailscope_core::archive::RunArchive;
use entailscope_core::metrics::{MetricMean, MetricMeans, Percent};
use entailscope_core::prompt::MethodId;

use crate::{io_err, HarnessError};

/// Accuracy of one (model, dataset, method) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyCell {
    pub model: String,
    /// `LLM` or `LRM`.
    pub family: String,
    pub dataset: String,
    pub method: MethodId,
    pub accuracy: Percent,
}

pub fn family_of(is_reasoning_model: bool) -> &'static str {
    if is_reasoning_model {
        "LRM"
    } else {
        "LLM"
    }
}

pub fn parse_cells(text: &str) -> Result<Vec<AccuracyCell>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| HarnessError::Input(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn read_cells(path: &Path) -> Result<Vec<AccuracyCell>, HarnessError> {
    parse_cells(&std::fs::read_to_string(path).map_err(io_err(path))?)
}

/// One cell per run, using headline accuracy (parse failures incorrect).
pub fn cells_from_runs(runs: &[RunArchive]) -> Result<Vec<AccuracyCell>, HarnessError> {
    runs.iter()
        .map(|run| {
            let accuracy = run.summary().accuracy.ok_or_else(|| {
                HarnessError::Input(format!("run {} has no completed instances", run.meta.run_id))
            })?;
            let reasoning = run.meta.model_spec["is_reasoning_model"].as_bool().unwrap_or(false);
            Ok(AccuracyCell {
                model: run.meta.model.clone(),
                family: family_of(reasoning).to_string(),
                dataset: run.meta.dataset.name.clone(),
                method: run.meta.method,
                accuracy,
            })
        })
        .collect()
}

/// Checks that runs sharing a (model, dataset) pair were drawn from the
/// same sample of the same dataset file.
pub fn check_samples(runs: &[RunArchive]) -> Result<(), HarnessError> {
    let mut seen: BTreeMap<(String, String), &RunArchive> = BTreeMap::new();
    for run in runs {
        let key = (run.meta.model.clone(), run.meta.dataset.name.clone());
        if let Some(first) = seen.get(&key) {
            if first.meta.dataset != run.meta.dataset || first.meta.sample.ids_digest != run.meta.sample.ids_digest {
                return Err(HarnessError::SampleMismatch(format!(
                    "{} and {}",
                    first.meta.run_id, run.meta.run_id
                )));
            }
        } else {
            seen.insert(key, run);
        }
    }
    Ok(())
}

fn first_seen<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    values.filter(|v| seen.insert(*v)).map(str::to_string).collect()
}

type CellKey = (String, String, MethodId);

fn index_cells(cells: &[AccuracyCell]) -> Result<BTreeMap<CellKey, Percent>, HarnessError> {
    let mut index = BTreeMap::new();
    for c in cells {
        if index
            .insert((c.model.clone(), c.dataset.clone(), c.method), c.accuracy)
            .is_some()
        {
            return Err(HarnessError::Input(format!(
                "duplicate cell for {} / {} / {}",
                c.model, c.dataset, c.method
            )));
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeltaCell {
    pub baseline: Percent,
    pub treatment: Percent,
    pub delta: Percent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeltaRow {
    pub family: String,
    pub model: String,
    /// Aligned with [`DeltaReport::datasets`].
    pub cells: Vec<Option<DeltaCell>>,
    /// Mean delta over datasets; absent if any dataset is missing.
    pub average: Option<Percent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeltaReport {
    pub baseline: MethodId,
    pub treatment: MethodId,
    pub datasets: Vec<String>,
    pub rows: Vec<DeltaRow>,
    /// Mean of the per-model averages within each family.
    pub families: Vec<(String, Option<Percent>)>,
}

/// Treatment minus baseline for every (model, dataset) pair, with
/// per-model and per-family averages.
pub fn delta_report(
    cells: &[AccuracyCell],
    baseline: MethodId,
    treatment: MethodId,
) -> Result<DeltaReport, HarnessError> {
    let index = index_cells(cells)?;
    let relevant: Vec<&AccuracyCell> = cells
        .iter()
        .filter(|c| c.method == baseline || c.method == treatment)
        .collect();
    let datasets = first_seen(relevant.iter().map(|c| c.dataset.as_str()));
    let models = first_seen(relevant.iter().map(|c| c.model.as_str()));
    let families = first_seen(relevant.iter().map(|c| c.family.as_str()));
    let family_of_model: BTreeMap<&str, &str> =
        relevant.iter().map(|c| (c.model.as_str(), c.family.as_str())).collect();

    let rows: Vec<DeltaRow> = models
        .iter()
        .map(|model| {
            let cells: Vec<Option<DeltaCell>> = datasets
                .iter()
                .map(|ds| {
                    let b = index.get(&(model.clone(), ds.clone(), baseline))?;
                    let t = index.get(&(model.clone(), ds.clone(), treatment))?;
                    Some(DeltaCell {
                        baseline: *b,
                        treatment: *t,
                        delta: *t - *b,
                    })
                })
                .collect();
            let deltas: Option<Vec<Percent>> = cells.iter().map(|c| c.map(|c| c.delta)).collect();
            DeltaRow {
                family: family_of_model[model.as_str()].to_string(),
                model: model.clone(),
                average: deltas.and_then(|d| Percent::mean(&d)),
                cells,
            }
        })
        .collect();

    let families = families
        .into_iter()
        .map(|f| {
            let avgs: Vec<Percent> = rows
                .iter()
                .filter(|r| r.family == f)
                .filter_map(|r| r.average)
                .collect();
            let mean = Percent::mean(&avgs);
            (f, mean)
        })
        .collect();
    Ok(DeltaReport {
        baseline,
        treatment,
        datasets,
        rows,
        families,
    })
}

fn opt_fmt(p: Option<Percent>) -> String {
    p.map_or_else(|| "--".to_string(), Percent::fmt2)
}

fn opt_signed(p: Option<Percent>) -> String {
    p.map_or_else(|| "--".to_string(), Percent::fmt_signed)
}

/// Column-aligned plain text; the first `left` columns are left-aligned.
fn render_table(header: &[String], rows: &[Vec<String>], left: usize) -> String {
    let width = |col: usize| {
        std::iter::once(header)
            .chain(rows.iter().map(Vec::as_slice))
            .map(|r| r.get(col).map_or(0, |c| c.chars().count()))
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..header.len()).map(width).collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i < left {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

impl DeltaReport {
    pub fn to_text(&self) -> String {
        let mut header = vec!["family".to_string(), "model".to_string()];
        for ds in &self.datasets {
            header.push(format!("{ds} {}", self.baseline));
            header.push(format!("{ds} {}", self.treatment));
            header.push(format!("{ds} delta"));
        }
        header.push("avg delta".to_string());
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.family.clone(), r.model.clone()];
                for c in &r.cells {
                    cells.push(opt_fmt(c.map(|c| c.baseline)));
                    cells.push(opt_fmt(c.map(|c| c.treatment)));
                    cells.push(opt_signed(c.map(|c| c.delta)));
                }
                cells.push(opt_signed(r.average));
                cells
            })
            .collect();
        for (family, mean) in &self.families {
            let mut cells = vec![family.clone(), "average".to_string()];
            cells.extend(std::iter::repeat_n(String::new(), 3 * self.datasets.len()));
            cells.push(opt_signed(*mean));
            rows.push(cells);
        }
        render_table(&header, &rows, 2)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            for (ds, c) in self.datasets.iter().zip(&r.cells) {
                let rec = json!({
                    "kind": "cell",
                    "family": r.family,
                    "model": r.model,
                    "dataset": ds,
                    "baseline": c.map(|c| c.baseline.fmt2()),
                    "treatment": c.map(|c| c.treatment.fmt2()),
                    "delta": c.map(|c| c.delta.fmt_signed()),
                });
                out.push_str(&rec.to_string());
                out.push('\n');
            }
            let rec = json!({
                "kind": "model_average",
                "family": r.family,
                "model": r.model,
                "delta": r.average.map(Percent::fmt_signed),
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        for (family, mean) in &self.families {
            let rec = json!({"kind": "family_average", "family": family, "delta": mean.map(Percent::fmt_signed)});
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AverageCell {
    pub mean: Option<Percent>,
    pub models: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Gap {
    pub model: String,
    pub method: MethodId,
    pub dataset: String,
}

/// Mean accuracy over models for each (method, dataset) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AverageReport {
    pub family: Option<String>,
    pub methods: Vec<MethodId>,
    pub datasets: Vec<String>,
    /// `cells[m][d]` for `methods[m]`, `datasets[d]`.
    pub cells: Vec<Vec<AverageCell>>,
    /// Mean of a method's dataset averages, when none is missing.
    pub overall: Vec<Option<Percent>>,
    pub gaps: Vec<Gap>,
}

/// Averages each (method, dataset) column over the models that have it,
/// optionally restricted to one family. Missing cells are listed as gaps.
pub fn average_report(
    cells: &[AccuracyCell],
    methods: &[MethodId],
    family: Option<&str>,
) -> Result<AverageReport, HarnessError> {
    let index = index_cells(cells)?;
    let selected: Vec<&AccuracyCell> = cells
        .iter()
        .filter(|c| methods.contains(&c.method) && family.is_none_or(|f| c.family == f))
        .collect();
    let datasets = first_seen(selected.iter().map(|c| c.dataset.as_str()));
    let models = first_seen(selected.iter().map(|c| c.model.as_str()));
    let mut gaps = Vec::new();
    let table: Vec<Vec<AverageCell>> = methods
        .iter()
        .map(|&method| {
            datasets
                .iter()
                .map(|ds| {
                    let mut values = Vec::new();
                    for model in &models {
                        match index.get(&(model.clone(), ds.clone(), method)) {
                            Some(v) => values.push(*v),
                            None => gaps.push(Gap {
                                model: model.clone(),
                                method,
                                dataset: ds.clone(),
                            }),
                        }
                    }
                    AverageCell {
                        mean: Percent::mean(&values),
                        models: values.len(),
                    }
                })
                .collect()
        })
        .collect();
    let overall = table
        .iter()
        .map(|row| {
            let means: Option<Vec<Percent>> = row.iter().map(|c| c.mean).collect();
            means.and_then(|m| Percent::mean(&m))
        })
        .collect();
    Ok(AverageReport {
        family: family.map(str::to_string),
        methods: methods.to_vec(),
        datasets,
        cells: table,
        overall,
        gaps,
    })
}

impl AverageReport {
    pub fn cell(&self, method: MethodId, dataset: &str) -> Option<&AverageCell> {
        let m = self.methods.iter().position(|x| *x == method)?;
        let d = self.datasets.iter().position(|x| x == dataset)?;
        Some(&self.cells[m][d])
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["method".to_string()];
        header.extend(self.datasets.iter().cloned());
        header.push("overall".to_string());
        let rows: Vec<Vec<String>> = self
            .methods
            .iter()
            .zip(&self.cells)
            .zip(&self.overall)
            .map(|((m, row), overall)| {
                let mut cells = vec![m.to_string()];
                cells.extend(row.iter().map(|c| opt_fmt(c.mean)));
                cells.push(opt_fmt(*overall));
                cells
            })
            .collect();
        let mut out = String::new();
        if let Some(f) = &self.family {
            out.push_str(&format!("family: {f}\n"));
        }
        out.push_str(&render_table(&header, &rows, 1));
        for g in &self.gaps {
            out.push_str(&format!("gap: {} has no {} result on {}\n", g.model, g.method, g.dataset));
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (m, row) in self.methods.iter().zip(&self.cells) {
            for (ds, c) in self.datasets.iter().zip(row) {
                let rec = json!({
                    "kind": "cell",
                    "family": self.family,
                    "method": m,
                    "dataset": ds,
                    "mean": c.mean.map(Percent::fmt2),
                    "models": c.models,
                });
                out.push_str(&rec.to_string());
                out.push('\n');
            }
        }
        for (m, overall) in self.methods.iter().zip(&self.overall) {
            let rec = json!({"kind": "overall", "family": self.family, "method": m, "mean": overall.map(Percent::fmt2)});
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        for g in &self.gaps {
            let rec = json!({"kind": "gap", "model": g.model, "method": g.method, "dataset": g.dataset});
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

/// Dataset-level means of the six reasoning metrics for one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricSummary {
    pub run_id: String,
    /// Annotation records that contributed.
    pub annotated: usize,
    pub annotator: Option<String>,
    pub means: MetricMeans,
}

impl MetricSummary {
    fn metrics(&self) -> [(&'static str, &MetricMean); 6] {
        let m = &self.means;
        [
            ("atomicity", &m.atomicity),
            ("soundness", &m.soundness),
            ("completeness", &m.completeness),
            ("attribution", &m.attribution),
            ("entailment", &m.entailment),
            ("aggregation", &m.aggregation),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("run: {}\nannotated traces: {}\n", self.run_id, self.annotated);
        if let Some(a) = &self.annotator {
            out.push_str(&format!("annotator: {a}\n"));
        }
        let header = vec!["metric".to_string(), "n".to_string(), "mean".to_string()];
        let rows: Vec<Vec<String>> = self
            .metrics()
            .iter()
            .map(|(name, m)| vec![name.to_string(), m.count.to_string(), m.fmt2()])
            .collect();
        out.push_str(&render_table(&header, &rows, 1));
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (name, m) in self.metrics() {
            let rec = json!({
                "run": self.run_id,
                "annotator": self.annotator,
                "metric": name,
                "n": m.count,
                "mean": m.mean.map(|_| m.fmt2()),
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }

    /// JSON body for the summary endpoint.
    pub fn to_json(&self) -> serde_json::Value {
        let metrics: serde_json::Map<String, serde_json::Value> = self
            .metrics()
            .iter()
            .map(|(name, m)| {
                let value = m.mean.map(|r| *r.numer() as f64 / *r.denom() as f64);
                (
                    name.to_string(),
                    json!({"n": m.count, "mean": value, "display": m.fmt2()}),
                )
            })
            .collect();
        json!({
            "run": self.run_id,
            "annotator": self.annotator,
            "annotated": self.annotated,
            "metrics": metrics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(model: &str, family: &str, dataset: &str, method: MethodId, acc: &str) -> AccuracyCell {
        AccuracyCell {
            model: model.into(),
            family: family.into(),
            dataset: dataset.into(),
            method,
            accuracy: acc.parse().unwrap(),
        }
    }

    #[test]
    fn single_pair_delta() {
        let cells = vec![
            cell("Qwen-Plus", "LLM", "claimverify", MethodId::Baseline, "71.00"),
            cell("Qwen-Plus", "LLM", "claimverify", MethodId::Clatter, "74.40"),
        ];
        let r = delta_report(&cells, MethodId::Baseline, MethodId::Clatter).unwrap();
        assert_eq!(r.rows[0].cells[0].unwrap().delta.fmt_signed(), "+3.40");
        let same = delta_report(&cells, MethodId::Baseline, MethodId::Baseline).unwrap();
        assert_eq!(same.rows[0].cells[0].unwrap().delta.fmt2(), "0.00");
    }

    #[test]
    fn missing_pair_is_gap() {
        let cells = vec![
            cell("A", "LLM", "x", MethodId::Baseline, "50"),
            cell("A", "LLM", "y", MethodId::Baseline, "50"),
            cell("A", "LLM", "y", MethodId::Clatter, "60"),
        ];
        let r = delta_report(&cells, MethodId::Baseline, MethodId::Clatter).unwrap();
        assert_eq!(r.rows[0].cells[0], None);
        assert_eq!(r.rows[0].average, None);
        assert!(r.to_text().contains("--"));
    }

    #[test]
    fn duplicate_cells_rejected() {
        let c = cell("A", "LLM", "x", MethodId::Baseline, "50");
        assert!(delta_report(&[c.clone(), c], MethodId::Baseline, MethodId::Clatter).is_err());
    }

    #[test]
    fn averages_and_gaps() {
        let cells = vec![
            cell("A", "LLM", "x", MethodId::Baseline, "70"),
            cell("B", "LRM", "x", MethodId::Baseline, "71"),
            cell("A", "LLM", "x", MethodId::AblateDecomp, "60"),
        ];
        let r = average_report(&cells, &[MethodId::Baseline, MethodId::AblateDecomp], None).unwrap();
        assert_eq!(r.cell(MethodId::Baseline, "x").unwrap().mean.unwrap().fmt2(), "70.50");
        assert_eq!(r.cell(MethodId::AblateDecomp, "x").unwrap().models, 1);
        assert_eq!(r.gaps.len(), 1);
        assert_eq!(r.gaps[0].model, "B");
        let only = average_report(&cells, &[MethodId::Baseline], Some("LRM")).unwrap();
        assert_eq!(only.cell(MethodId::Baseline, "x").unwrap().mean.unwrap().fmt2(), "71.00");
        assert!(r.to_text().contains("gap: B"));
    }

    #[test]
    fn cells_parse_from_jsonl() {
        let text = "# comment\n{\"model\":\"m\",\"family\":\"LLM\",\"dataset\":\"d\",\"method\":\"clatter\",\"accuracy\":\"74.40\"}\n";
        let cells = parse_cells(text).unwrap();
        assert_eq!(cells[0].accuracy.fmt2(), "74.40");
        assert!(parse_cells("{\"model\":1}").is_err());
    }
}
