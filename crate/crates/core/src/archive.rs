//! On-disk record of one experiment cell (method x model x dataset).
//!
//! Layout of a run directory:
//!
//! ```text
//! meta.json        run metadata, written once
//! instances.jsonl  the sampled instances, in run order
//! rows.jsonl       one row per instance, appended as instances finish
//! summary.json     accuracy summary, recomputable from the rows
//! responses/       raw responses and thinking text, named by SHA-256
//! ```

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::label::BinaryVerdict;
use crate::metrics::Percent;
use crate::prompt::MethodId;
use crate::types::{ParseStatus, ReasoningTrace, SubClaimRecord, VerificationInstance};

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0} holds a different run; refusing to mix archives")]
    MetaMismatch(PathBuf),
    #[error("{0} is not a run directory")]
    NotARun(PathBuf),
    #[error("missing response blob {0}")]
    MissingBlob(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `<run_id>:<instance_id>`
pub fn trace_id(run_id: &str, instance_id: &str) -> String {
    format!("{run_id}:{instance_id}")
}

/// Inverse of [`trace_id`]. Run ids never contain ':'.
pub fn split_trace_id(trace_id: &str) -> Option<(&str, &str)> {
    trace_id.split_once(':')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub source_digest: String,
}

/// How the instances of a run were chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// SHA-256 over the newline-joined instance ids, in run order.
    pub ids_digest: String,
}

impl SampleRef {
    pub fn of(instances: &[VerificationInstance], n_per_class: Option<usize>, seed: Option<u64>) -> Self {
        let joined = instances
            .iter()
            .map(|i| i.instance_id.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        SampleRef {
            size: instances.len(),
            n_per_class,
            seed,
            ids_digest: sha256_hex(joined.as_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub method: MethodId,
    /// `<provider>/<model name>`
    pub model: String,
    /// The full model configuration, as the gateway serializes it.
    pub model_spec: serde_json::Value,
    pub cot: bool,
    pub template_hash: String,
    pub dataset: DatasetRef,
    pub sample: SampleRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Completed,
    /// The provider call failed; the instance has no response.
    Skipped,
}

/// One instance of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRow {
    pub instance_id: String,
    pub gold_label: BinaryVerdict,
    pub prompt_hash: String,
    pub status: RowStatus,
    /// The model's stated verdict; this is the prediction.
    pub verdict: Option<BinaryVerdict>,
    /// Verdict implied by the parsed sub-claim labels.
    pub aggregated_verdict: Option<BinaryVerdict>,
    pub disagreement: bool,
    pub parse_status: Option<ParseStatus>,
    pub response_sha: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking_sha: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sub_claims: Vec<SubClaimRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRow {
    pub fn completed(
        instance: &VerificationInstance,
        prompt_hash: impl Into<String>,
        trace: &ReasoningTrace,
        response_sha: String,
        thinking_sha: Option<String>,
        attempts: u32,
    ) -> Self {
        RunRow {
            instance_id: instance.instance_id.clone(),
            gold_label: instance.gold_label,
            prompt_hash: prompt_hash.into(),
            status: RowStatus::Completed,
            verdict: trace.final_verdict,
            aggregated_verdict: trace.aggregated_verdict(),
            disagreement: trace.verdict_disagrees(),
            parse_status: Some(trace.parse_status()),
            response_sha: Some(response_sha),
            thinking_sha,
            sub_claims: trace.sub_claims.clone(),
            attempts: Some(attempts),
            error: None,
        }
    }

    pub fn skipped(instance: &VerificationInstance, prompt_hash: impl Into<String>, error: impl Into<String>) -> Self {
        RunRow {
            instance_id: instance.instance_id.clone(),
            gold_label: instance.gold_label,
            prompt_hash: prompt_hash.into(),
            status: RowStatus::Skipped,
            verdict: None,
            aggregated_verdict: None,
            disagreement: false,
            parse_status: None,
            response_sha: None,
            thinking_sha: None,
            sub_claims: Vec::new(),
            attempts: None,
            error: Some(error.into()),
        }
    }

    pub fn is_correct(&self) -> bool {
        self.status == RowStatus::Completed && self.verdict == Some(self.gold_label)
    }

    pub fn is_parse_failure(&self) -> bool {
        self.status == RowStatus::Completed && self.verdict.is_none()
    }
}

/// Accuracy over a run's rows.
///
/// `accuracy` counts parse failures as incorrect; `accuracy_parsed` drops
/// them. Skipped instances appear in neither denominator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub instances: usize,
    pub completed: usize,
    pub skipped: usize,
    pub parse_failures: usize,
    pub correct: usize,
    pub disagreements: usize,
    pub accuracy: Option<Percent>,
    pub accuracy_parsed: Option<Percent>,
    /// More than 5% of instances skipped.
    pub degraded: bool,
}

impl RunSummary {
    pub fn from_rows(rows: &[RunRow]) -> Self {
        let completed = rows.iter().filter(|r| r.status == RowStatus::Completed).count();
        let parse_failures = rows.iter().filter(|r| r.is_parse_failure()).count();
        let correct = rows.iter().filter(|r| r.is_correct()).count();
        let skipped = rows.len() - completed;
        let parsed = completed - parse_failures;
        let pct = |n: usize, d: usize| (d > 0).then(|| Percent::from_fraction(n as i64, d as i64));
        RunSummary {
            instances: rows.len(),
            completed,
            skipped,
            parse_failures,
            correct,
            disagreements: rows.iter().filter(|r| r.disagreement).count(),
            accuracy: pct(correct, completed),
            accuracy_parsed: pct(correct, parsed),
            degraded: skipped * 20 > rows.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunArchive {
    pub meta: RunMeta,
    pub rows: Vec<RunRow>,
}

impl RunArchive {
    pub fn summary(&self) -> RunSummary {
        RunSummary::from_rows(&self.rows)
    }

    pub fn row(&self, instance_id: &str) -> Option<&RunRow> {
        self.rows.iter().find(|r| r.instance_id == instance_id)
    }
}

/// A run directory. One writer at a time; readers may open it freely.
#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates the directory and writes `meta`, or reopens an existing run
    /// with identical metadata.
    pub fn create(path: impl Into<PathBuf>, meta: &RunMeta) -> Result<Self, ArchiveError> {
        let dir = RunDir { path: path.into() };
        let meta_path = dir.meta_path();
        if meta_path.exists() {
            if &dir.meta()? != meta {
                return Err(ArchiveError::MetaMismatch(dir.path));
            }
            return Ok(dir);
        }
        let responses = dir.path.join("responses");
        fs::create_dir_all(&responses).map_err(io_err(&responses))?;
        let json = serde_json::to_string_pretty(meta).expect("meta serializes");
        write_atomic(&meta_path, format!("{json}\n").as_bytes())?;
        Ok(dir)
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ArchiveError> {
        let dir = RunDir { path: path.into() };
        if !dir.meta_path().exists() {
            return Err(ArchiveError::NotARun(dir.path));
        }
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn meta_path(&self) -> PathBuf {
        self.path.join("meta.json")
    }

    fn rows_path(&self) -> PathBuf {
        self.path.join("rows.jsonl")
    }

    fn summary_path(&self) -> PathBuf {
        self.path.join("summary.json")
    }

    pub fn cache_path(&self) -> PathBuf {
        self.path.join("cache.jsonl")
    }

    pub fn meta(&self) -> Result<RunMeta, ArchiveError> {
        let path = self.meta_path();
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| ArchiveError::Corrupt {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Rows in first-seen order; a later row for the same instance
    /// replaces the earlier one.
    pub fn rows(&self) -> Result<Vec<RunRow>, ArchiveError> {
        let path = self.rows_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut rows: Vec<RunRow> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: RunRow = serde_json::from_str(line).map_err(|e| ArchiveError::Corrupt {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            match index.get(&row.instance_id) {
                Some(&k) => rows[k] = row,
                None => {
                    index.insert(row.instance_id.clone(), rows.len());
                    rows.push(row);
                }
            }
        }
        Ok(rows)
    }

    pub fn append_row(&self, row: &RunRow) -> Result<(), ArchiveError> {
        let path = self.rows_path();
        let mut line = serde_json::to_string(row).expect("row serializes");
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        file.flush().map_err(io_err(&path))
    }

    /// Stores `text` under its digest and returns the digest.
    pub fn put_blob(&self, text: &str) -> Result<String, ArchiveError> {
        let sha = sha256_hex(text.as_bytes());
        let path = self.blob_path(&sha);
        if !path.exists() {
            write_atomic(&path, text.as_bytes())?;
        }
        Ok(sha)
    }

    pub fn blob(&self, sha: &str) -> Result<String, ArchiveError> {
        let path = self.blob_path(sha);
        match fs::read_to_string(&path) {
            Ok(t) => Ok(t),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(ArchiveError::MissingBlob(sha.to_string())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    fn blob_path(&self, sha: &str) -> PathBuf {
        self.path.join("responses").join(format!("{sha}.txt"))
    }

    fn instances_path(&self) -> PathBuf {
        self.path.join("instances.jsonl")
    }

    /// Records the run's instances. Rewriting with a different list fails.
    pub fn write_instances(&self, instances: &[VerificationInstance]) -> Result<(), ArchiveError> {
        let mut text = String::new();
        for inst in instances {
            text.push_str(&serde_json::to_string(inst).expect("instance serializes"));
            text.push('\n');
        }
        let path = self.instances_path();
        if path.exists() {
            let existing = fs::read_to_string(&path).map_err(io_err(&path))?;
            if existing != text {
                return Err(ArchiveError::MetaMismatch(self.path.clone()));
            }
            return Ok(());
        }
        write_atomic(&path, text.as_bytes())
    }

    pub fn instances(&self) -> Result<Vec<VerificationInstance>, ArchiveError> {
        let path = self.instances_path();
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ArchiveError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn write_summary(&self, summary: &RunSummary) -> Result<(), ArchiveError> {
        let json = serde_json::to_string_pretty(summary).expect("summary serializes");
        write_atomic(&self.summary_path(), format!("{json}\n").as_bytes())
    }

    /// Loads metadata and rows. A stored summary that disagrees with the
    /// rows is an error.
    pub fn load(&self) -> Result<RunArchive, ArchiveError> {
        let archive = RunArchive {
            meta: self.meta()?,
            rows: self.rows()?,
        };
        let path = self.summary_path();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let stored: RunSummary = serde_json::from_str(&text).map_err(|e| ArchiveError::Corrupt {
                path: path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            if stored != archive.summary() {
                return Err(ArchiveError::Corrupt {
                    path,
                    line: 1,
                    message: "stored summary does not match rows".into(),
                });
            }
        }
        Ok(archive)
    }

    /// Rebuilds the full trace of a completed row.
    pub fn trace(&self, meta: &RunMeta, row: &RunRow) -> Result<Option<ReasoningTrace>, ArchiveError> {
        let Some(sha) = row.response_sha.as_deref() else {
            return Ok(None);
        };
        let raw = self.blob(sha)?;
        let thinking = row.thinking_sha.as_deref().map(|s| self.blob(s)).transpose()?;
        Ok(Some(ReasoningTrace::new(
            row.sub_claims.clone(),
            row.verdict,
            raw,
            thinking,
            meta.method,
        )))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArchiveError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
