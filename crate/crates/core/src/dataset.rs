//! Dataset ingest, balanced sampling and sample-id lists.
//!
//! Input files hold one JSON object per line with string fields `doc`,
//! `claim` and `label`, plus optional `id` / `instance_id`, `model` and
//! any other metadata. Records without an id are named after a digest of
//! the line. Accepted labels are `supported`, `not_supported`
//! (or `not supported`), `partially supported` (merged into
//! not-supported) and the integers 1 / 0.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::label::BinaryVerdict;
use crate::types::VerificationInstance;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("dataset `{0}` is not in the store")]
    UnknownDataset(String),
    #[error("dataset name `{0}` must be a single path component")]
    BadName(String),
    #[error("not enough {label} instances: need {needed}, have {available}")]
    InsufficientClass {
        label: BinaryVerdict,
        needed: usize,
        available: usize,
    },
    #[error("sample list refers to unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("sample list repeats instance `{0}`")]
    DuplicateInstance(String),
    #[error("sample list was drawn from dataset {expected}, not {actual}")]
    SampleMismatch { expected: String, actual: String },
    #[error("manifest does not match records: {0}")]
    Corrupt(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Summary of an ingested dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub record_count: usize,
    pub label_counts: BTreeMap<BinaryVerdict, usize>,
    /// SHA-256 of the ingested file, hex.
    pub source_digest: String,
}

impl DatasetManifest {
    pub fn count(&self, label: BinaryVerdict) -> usize {
        self.label_counts.get(&label).copied().unwrap_or(0)
    }
}

/// One rejected input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

/// Validated records, kept together with their original text.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub instances: Vec<VerificationInstance>,
    raw: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub dataset: Dataset,
    pub malformed: Vec<MalformedLine>,
}

/// Maps an input label to a binary verdict.
pub fn normalize_label(value: &Value) -> Option<BinaryVerdict> {
    match value {
        Value::Number(n) => match n.as_i64() {
            Some(1) => Some(BinaryVerdict::Supported),
            Some(0) => Some(BinaryVerdict::NotSupported),
            _ => None,
        },
        Value::Bool(b) => Some(if *b {
            BinaryVerdict::Supported
        } else {
            BinaryVerdict::NotSupported
        }),
        Value::String(s) => {
            let key: String = s
                .trim()
                .to_ascii_lowercase()
                .chars()
                .map(|c| if c == '-' || c == ' ' { '_' } else { c })
                .collect();
            match key.as_str() {
                "supported" | "1" => Some(BinaryVerdict::Supported),
                "not_supported" | "unsupported" | "partially_supported" | "0" => {
                    Some(BinaryVerdict::NotSupported)
                }
                _ => None,
            }
        }
        _ => None,
    }
}

fn string_field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a str, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Err(format!("missing field `{key}`")),
        Some(Value::String(s)) if s.trim().is_empty() => Err(format!("field `{key}` is empty")),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(format!("field `{key}` is not a string")),
    }
}

fn id_field(obj: &serde_json::Map<String, Value>) -> Result<Option<String>, String> {
    for key in ["instance_id", "id"] {
        match obj.get(key) {
            None | Some(Value::Null) => continue,
            Some(Value::String(s)) if !s.trim().is_empty() => return Ok(Some(s.clone())),
            Some(Value::Number(n)) => return Ok(Some(n.to_string())),
            Some(_) => return Err(format!("field `{key}` is not a usable id")),
        }
    }
    Ok(None)
}

fn parse_record(name: &str, line: &str) -> Result<VerificationInstance, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(obj) = value else {
        return Err("record is not an object".into());
    };
    let doc = string_field(&obj, "doc")?;
    let claim = string_field(&obj, "claim")?;
    let label = match obj.get("label") {
        None | Some(Value::Null) => return Err("missing field `label`".into()),
        Some(v) => normalize_label(v).ok_or_else(|| format!("unknown label {v}"))?,
    };
    let id = id_field(&obj)?.unwrap_or_else(|| format!("{name}-{}", &sha256_hex(line.as_bytes())[..12]));
    let mut instance = VerificationInstance::new(id, doc, claim, label, name).map_err(|e| e.to_string())?;
    if let Some(Value::String(model)) = obj.get("model") {
        instance = instance.with_origin_model(model.clone());
    }
    Ok(instance)
}

fn manifest_for(name: &str, instances: &[VerificationInstance], digest: String) -> DatasetManifest {
    let mut label_counts = BTreeMap::from([(BinaryVerdict::Supported, 0), (BinaryVerdict::NotSupported, 0)]);
    for inst in instances {
        *label_counts.entry(inst.gold_label).or_default() += 1;
    }
    DatasetManifest {
        name: name.to_string(),
        record_count: instances.len(),
        label_counts,
        source_digest: digest,
    }
}

impl Dataset {
    /// Parses line-delimited records. Blank lines are ignored; every other
    /// line either becomes an instance or is reported as malformed.
    pub fn parse(name: &str, bytes: &[u8]) -> IngestReport {
        let text = String::from_utf8_lossy(bytes);
        let mut instances = Vec::new();
        let mut raw = Vec::new();
        let mut malformed = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            match parse_record(name, line) {
                Ok(inst) if !seen.insert(inst.instance_id.clone()) => malformed.push(MalformedLine {
                    line: line_no,
                    reason: format!("duplicate instance id `{}`", inst.instance_id),
                }),
                Ok(inst) => {
                    instances.push(inst);
                    raw.push(line.to_string());
                }
                Err(reason) => malformed.push(MalformedLine { line: line_no, reason }),
            }
        }
        let manifest = manifest_for(name, &instances, sha256_hex(bytes));
        IngestReport {
            dataset: Dataset {
                manifest,
                instances,
                raw,
            },
            malformed,
        }
    }

    pub fn read(name: &str, path: &Path) -> Result<IngestReport, DatasetError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Ok(Self::parse(name, &bytes))
    }

    /// The accepted records, one per line, exactly as they were read.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for line in &self.raw {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn get(&self, instance_id: &str) -> Option<&VerificationInstance> {
        self.instances.iter().find(|i| i.instance_id == instance_id)
    }

    /// Draws `n_per_class` instances of each label uniformly without
    /// replacement, then shuffles. Deterministic for a given seed.
    pub fn balanced_sample(&self, n_per_class: usize, seed: u64) -> Result<Vec<VerificationInstance>, DatasetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = Vec::with_capacity(2 * n_per_class);
        for label in BinaryVerdict::ALL {
            let members: Vec<usize> = (0..self.instances.len())
                .filter(|&i| self.instances[i].gold_label == label)
                .collect();
            if members.len() < n_per_class {
                return Err(DatasetError::InsufficientClass {
                    label,
                    needed: n_per_class,
                    available: members.len(),
                });
            }
            let mut chosen: Vec<usize> = index::sample(&mut rng, members.len(), n_per_class)
                .into_iter()
                .map(|k| members[k])
                .collect();
            chosen.sort_unstable();
            picked.extend(chosen);
        }
        picked.shuffle(&mut rng);
        Ok(picked.into_iter().map(|i| self.instances[i].clone()).collect())
    }

    /// Looks up the instances of a shared sample list, in list order.
    pub fn select(&self, sample: &SampleIds) -> Result<Vec<VerificationInstance>, DatasetError> {
        if sample.source_digest != self.manifest.source_digest {
            return Err(DatasetError::SampleMismatch {
                expected: sample.source_digest.clone(),
                actual: self.manifest.source_digest.clone(),
            });
        }
        let mut seen = HashSet::new();
        sample
            .ids
            .iter()
            .map(|id| {
                if !seen.insert(id.as_str()) {
                    return Err(DatasetError::DuplicateInstance(id.clone()));
                }
                self.get(id).cloned().ok_or_else(|| DatasetError::UnknownInstance(id.clone()))
            })
            .collect()
    }
}

/// A shareable list of sampled instance ids.
///
/// Text form: a `# dataset <name> <digest>` header line followed by one
/// id per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleIds {
    pub dataset: String,
    pub source_digest: String,
    pub ids: Vec<String>,
}

impl SampleIds {
    pub fn from_instances(manifest: &DatasetManifest, instances: &[VerificationInstance]) -> Self {
        SampleIds {
            dataset: manifest.name.clone(),
            source_digest: manifest.source_digest.clone(),
            ids: instances.iter().map(|i| i.instance_id.clone()).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# dataset {} {}\n", self.dataset, self.source_digest);
        for id in &self.ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let mut parts = header.strip_prefix("# dataset ").unwrap_or("").split_whitespace();
        let (Some(dataset), Some(digest)) = (parts.next(), parts.next()) else {
            return Err(DatasetError::Corrupt(format!("bad sample list header `{header}`")));
        };
        Ok(SampleIds {
            dataset: dataset.to_string(),
            source_digest: digest.to_string(),
            ids: lines.filter(|l| !l.trim().is_empty()).map(|l| l.trim().to_string()).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Directory of ingested datasets: `<root>/<name>/{manifest.json,records.jsonl}`.
#[derive(Debug, Clone)]
pub struct DatasetStore {
    root: PathBuf,
}

impl DatasetStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetStore { root: root.into() }
    }

    fn dir(&self, name: &str) -> Result<PathBuf, DatasetError> {
        let ok = !name.is_empty()
            && name != "."
            && name != ".."
            && !name.contains(['/', '\\'])
            && !name.chars().any(char::is_whitespace);
        if !ok {
            return Err(DatasetError::BadName(name.to_string()));
        }
        Ok(self.root.join(name))
    }

    /// Reads `path`, stores the accepted records under `name` and returns
    /// the report.
    pub fn ingest(&self, name: &str, path: &Path) -> Result<IngestReport, DatasetError> {
        let dir = self.dir(name)?;
        let report = Dataset::read(name, path)?;
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let records = dir.join("records.jsonl");
        fs::write(&records, report.dataset.export()).map_err(io_err(&records))?;
        let manifest = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&report.dataset.manifest).expect("manifest serializes");
        fs::write(&manifest, json + "\n").map_err(io_err(&manifest))?;
        Ok(report)
    }

    pub fn load(&self, name: &str) -> Result<Dataset, DatasetError> {
        let dir = self.dir(name)?;
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(DatasetError::UnknownDataset(name.to_string()));
        }
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: manifest_path.clone(),
            source,
        })?;
        let records = dir.join("records.jsonl");
        let bytes = fs::read(&records).map_err(io_err(&records))?;
        let mut report = Dataset::parse(name, &bytes);
        if !report.malformed.is_empty() || report.dataset.manifest.label_counts != manifest.label_counts {
            return Err(DatasetError::Corrupt(format!("{} was modified after ingest", records.display())));
        }
        report.dataset.manifest = manifest;
        Ok(report.dataset)
    }
}
