//! Annotation tasks, the versioned annotation store and the HTTP API.
//!
//! Annotations live in `annotations.jsonl` inside the run directory, one
//! `{"version": n, "record": {...}}` line per submission. The newest
//! version for a (trace, annotator) pair is current; older ones are kept.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use entailscope_core::archive::{trace_id, RowStatus, RunDir, RunMeta};
use entailscope_core::metrics::{expected_sub_claims, predicted_labels, EntailmentMode, MetricMeans, TraceScores};
use entailscope_core::types::FieldError;
use entailscope_core::{AnnotationRecord, Attribution, BinaryVerdict, EntailmentLabel, MethodId, ParseStatus, ReasoningTrace};

use crate::report::MetricSummary;
use crate::{io_err, HarnessError};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;
pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSubClaim {
    pub text: String,
    pub attribution: Option<Attribution>,
    /// The model's label; absent when the response could not be parsed.
    pub label: Option<EntailmentLabel>,
}

/// One trace prepared for annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub trace_id: String,
    pub run_id: String,
    pub instance_id: String,
    pub source: String,
    pub claim: String,
    pub gold_label: BinaryVerdict,
    pub method: MethodId,
    pub verdict: Option<BinaryVerdict>,
    pub parse_status: ParseStatus,
    /// The annotation lists must have exactly one entry per element.
    pub sub_claims: Vec<TaskSubClaim>,
    /// The trace has no decomposition; the whole claim stands in.
    pub implicit: bool,
    /// Nothing could be parsed; judge from the raw response.
    pub needs_raw_review: bool,
    pub raw_response: String,
    pub thinking: Option<String>,
}

impl AnnotationTask {
    fn build(run_id: &str, instance: &entailscope_core::VerificationInstance, trace: &ReasoningTrace) -> Self {
        let implicit = trace.sub_claims.is_empty();
        let sub_claims = if implicit {
            vec![TaskSubClaim {
                text: instance.claim.clone(),
                attribution: None,
                label: predicted_labels(trace).map(|l| l[0]),
            }]
        } else {
            trace
                .sub_claims
                .iter()
                .map(|s| TaskSubClaim {
                    text: s.text.clone(),
                    attribution: s.attribution.clone(),
                    label: Some(s.label),
                })
                .collect()
        };
        debug_assert_eq!(sub_claims.len(), expected_sub_claims(trace));
        AnnotationTask {
            trace_id: trace_id(run_id, &instance.instance_id),
            run_id: run_id.to_string(),
            instance_id: instance.instance_id.clone(),
            source: instance.source.clone(),
            claim: instance.claim.clone(),
            gold_label: instance.gold_label,
            method: trace.method,
            verdict: trace.final_verdict,
            parse_status: trace.parse_status(),
            sub_claims,
            implicit,
            needs_raw_review: trace.parse_status() == ParseStatus::Failed,
            raw_response: trace.raw_response.clone(),
            thinking: trace.reasoning_text.clone(),
        }
    }
}

/// One stored submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredAnnotation {
    /// 1 for the first submission of a (trace, annotator) pair.
    pub version: u32,
    pub record: AnnotationRecord,
}

#[derive(Debug)]
pub enum SubmitError {
    UnknownTrace(String),
    Invalid(Vec<FieldError>),
    Store(HarnessError),
}

impl From<HarnessError> for SubmitError {
    fn from(e: HarnessError) -> Self {
        SubmitError::Store(e)
    }
}

impl std::fmt::Display for SubmitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubmitError::UnknownTrace(t) => write!(f, "unknown trace `{t}`"),
            SubmitError::Invalid(errors) => {
                let parts: Vec<String> = errors.iter().map(|e| format!("{}: {}", e.field, e.reason)).collect();
                write!(f, "invalid annotation: {}", parts.join("; "))
            }
            SubmitError::Store(e) => e.fmt(f),
        }
    }
}

struct StoreState {
    file: File,
    history: Vec<StoredAnnotation>,
    /// (trace_id, annotator_id) → index of the current version.
    current: BTreeMap<(String, String), usize>,
}

/// Append-only annotation log with last-write-wins per (trace, annotator).
pub struct AnnotationStore {
    path: PathBuf,
    state: Mutex<StoreState>,
}

impl AnnotationStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let path = path.into();
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut history: Vec<StoredAnnotation> = Vec::new();
        let mut current = BTreeMap::new();
        for (i, line) in BufReader::new(&file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let stored: StoredAnnotation = serde_json::from_str(&line).map_err(|e| {
                HarnessError::Input(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            let key = (stored.record.trace_id.clone(), stored.record.annotator_id.clone());
            current.insert(key, history.len());
            history.push(stored);
        }
        let len = file.seek(SeekFrom::End(0)).map_err(io_err(&path))?;
        if len > 0 {
            let mut last = [0u8];
            file.seek(SeekFrom::Start(len - 1)).map_err(io_err(&path))?;
            file.read_exact(&mut last).map_err(io_err(&path))?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(io_err(&path))?;
            }
        }
        Ok(AnnotationStore {
            path,
            state: Mutex::new(StoreState { file, history, current }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates `record` against a trace with `n_sub_claims` sub-claims and
    /// appends it as a single line. Returns the stored version.
    pub fn submit(&self, mut record: AnnotationRecord, n_sub_claims: usize) -> Result<StoredAnnotation, SubmitError> {
        record.validate(n_sub_claims).map_err(SubmitError::Invalid)?;
        if record.timestamp.trim().is_empty() {
            record.timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        }
        let mut state = self.state.lock().expect("annotation store lock");
        let key = (record.trace_id.clone(), record.annotator_id.clone());
        let version = state.current.get(&key).map_or(1, |&i| state.history[i].version + 1);
        let stored = StoredAnnotation { version, record };
        let mut line = serde_json::to_string(&stored).expect("annotation serializes");
        line.push('\n');
        state.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        state.file.flush().map_err(io_err(&self.path))?;
        let index = state.history.len();
        state.history.push(stored.clone());
        state.current.insert(key, index);
        Ok(stored)
    }

    /// Current records, ordered by trace then annotator.
    pub fn current(&self) -> Vec<AnnotationRecord> {
        let state = self.state.lock().expect("annotation store lock");
        state.current.values().map(|&i| state.history[i].record.clone()).collect()
    }

    /// Every stored version for one trace, oldest first.
    pub fn history(&self, trace_id: &str) -> Vec<StoredAnnotation> {
        let state = self.state.lock().expect("annotation store lock");
        state
            .history
            .iter()
            .filter(|s| s.record.trace_id == trace_id)
            .cloned()
            .collect()
    }

    /// Annotators with a current record for `trace_id`.
    pub fn annotators(&self, trace_id: &str) -> Vec<String> {
        let state = self.state.lock().expect("annotation store lock");
        state
            .current
            .keys()
            .filter(|(t, _)| t == trace_id)
            .map(|(_, a)| a.clone())
            .collect()
    }
}

/// A run opened for annotation: its tasks, traces and annotation store.
pub struct AnnotatedRun {
    pub meta: RunMeta,
    pub tasks: Vec<AnnotationTask>,
    traces: Vec<ReasoningTrace>,
    index: HashMap<String, usize>,
    pub store: AnnotationStore,
}

impl AnnotatedRun {
    /// Loads every completed row of the run in `dir`. Skipped rows have no
    /// response and get no task.
    pub fn open(dir: &Path) -> Result<Self, HarnessError> {
        let run = RunDir::open(dir)?;
        let archive = run.load()?;
        let instances: HashMap<String, entailscope_core::VerificationInstance> = run
            .instances()?
            .into_iter()
            .map(|i| (i.instance_id.clone(), i))
            .collect();
        let mut tasks = Vec::new();
        let mut traces = Vec::new();
        for row in archive.rows.iter().filter(|r| r.status == RowStatus::Completed) {
            let instance = instances.get(&row.instance_id).ok_or_else(|| {
                HarnessError::Input(format!("row for unknown instance `{}`", row.instance_id))
            })?;
            let Some(trace) = run.trace(&archive.meta, row)? else {
                continue;
            };
            tasks.push(AnnotationTask::build(&archive.meta.run_id, instance, &trace));
            traces.push(trace);
        }
        let index = tasks.iter().enumerate().map(|(i, t)| (t.trace_id.clone(), i)).collect();
        let store = AnnotationStore::open(dir.join(ANNOTATIONS_FILE))?;
        Ok(AnnotatedRun {
            meta: archive.meta,
            tasks,
            traces,
            index,
            store,
        })
    }

    pub fn task(&self, trace_id: &str) -> Option<&AnnotationTask> {
        self.index.get(trace_id).map(|&i| &self.tasks[i])
    }

    pub fn entailment_mode(&self) -> EntailmentMode {
        if self.meta.method.is_binary_labelled() {
            EntailmentMode::Binary
        } else {
            EntailmentMode::ThreeWay
        }
    }

    pub fn submit(&self, record: AnnotationRecord) -> Result<StoredAnnotation, SubmitError> {
        let task = self
            .task(&record.trace_id)
            .ok_or_else(|| SubmitError::UnknownTrace(record.trace_id.clone()))?;
        self.store.submit(record, task.sub_claims.len())
    }

    /// Tasks as JSON lines, in row order.
    pub fn export_tasks(&self) -> String {
        self.tasks
            .iter()
            .map(|t| serde_json::to_string(t).expect("task serializes") + "\n")
            .collect()
    }

    /// Imports annotation records, one JSON object per line. Every line is
    /// checked before any is written.
    pub fn import(&self, text: &str) -> Result<usize, HarnessError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: AnnotationRecord = serde_json::from_str(line)
                .map_err(|e| HarnessError::Input(format!("line {}: {e}", i + 1)))?;
            let task = self
                .task(&record.trace_id)
                .ok_or_else(|| HarnessError::Input(format!("line {}: unknown trace `{}`", i + 1, record.trace_id)))?;
            record.validate(task.sub_claims.len()).map_err(|errors| {
                let parts: Vec<String> = errors.iter().map(|e| format!("{}: {}", e.field, e.reason)).collect();
                HarnessError::Input(format!("line {}: {}", i + 1, parts.join("; ")))
            })?;
            records.push(record);
        }
        let count = records.len();
        for record in records {
            self.submit(record).map_err(|e| match e {
                SubmitError::Store(e) => e,
                other => HarnessError::Input(other.to_string()),
            })?;
        }
        Ok(count)
    }

    /// Metric means over the current annotations, optionally of one
    /// annotator. Each (trace, annotator) record counts once.
    pub fn metric_summary(&self, annotator: Option<&str>) -> Result<MetricSummary, HarnessError> {
        let mode = self.entailment_mode();
        let mut scores = Vec::new();
        for record in self.store.current() {
            if annotator.is_some_and(|a| a != record.annotator_id) {
                continue;
            }
            let Some(&i) = self.index.get(&record.trace_id) else {
                continue;
            };
            let s = TraceScores::score(&self.traces[i], &record, mode)
                .map_err(|e| HarnessError::Input(format!("annotation for {}: {e}", record.trace_id)))?;
            scores.push(s);
        }
        Ok(MetricSummary {
            run_id: self.meta.run_id.clone(),
            annotated: scores.len(),
            annotator: annotator.map(str::to_string),
            means: MetricMeans::from_scores(&scores),
        })
    }
}

/// Runs served by the annotation API, keyed by run id.
pub struct AppState {
    runs: BTreeMap<String, AnnotatedRun>,
}

impl AppState {
    pub fn new(runs: Vec<AnnotatedRun>) -> Result<Self, HarnessError> {
        let mut map = BTreeMap::new();
        for run in runs {
            let id = run.meta.run_id.clone();
            if map.insert(id.clone(), run).is_some() {
                return Err(HarnessError::Input(format!("run `{id}` given twice")));
            }
        }
        Ok(AppState { runs: map })
    }

    pub fn run(&self, run_id: &str) -> Option<&AnnotatedRun> {
        self.runs.get(run_id)
    }
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn field_errors(errors: &[FieldError]) -> Response {
    (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "errors": errors }))).into_response()
}

impl AppState {
    /// The named run, or the only run when none is named.
    fn pick(&self, run: Option<&str>) -> Result<&AnnotatedRun, Response> {
        match run {
            Some(id) => self
                .runs
                .get(id)
                .ok_or_else(|| error_response(StatusCode::NOT_FOUND, format!("unknown run `{id}`"))),
            None if self.runs.len() == 1 => Ok(self.runs.values().next().expect("one run")),
            None => Err(error_response(StatusCode::BAD_REQUEST, "query parameter `run` is required")),
        }
    }

    fn trace_run(&self, trace_id: &str) -> Option<&AnnotatedRun> {
        let (run_id, _) = entailscope_core::archive::split_trace_id(trace_id)?;
        self.runs.get(run_id).filter(|r| r.task(trace_id).is_some())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/runs", get(list_runs))
        .route("/api/tasks", get(list_tasks))
        .route("/api/tasks/{trace_id}", get(get_task))
        .route("/api/annotations", post(post_annotation))
        .route("/api/summary", get(summary))
        .with_state(state)
}

/// Serves the API on `addr` until interrupted.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> Result<(), HarnessError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| HarnessError::Input(format!("bind {addr}: {e}")))?;
    tracing::info!("annotation API listening on http://{}", listener.local_addr().unwrap_or(addr));
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| HarnessError::Input(format!("server: {e}")))
}

fn run_counts(run: &AnnotatedRun) -> (usize, usize) {
    let done = run
        .tasks
        .iter()
        .filter(|t| !run.store.annotators(&t.trace_id).is_empty())
        .count();
    (run.tasks.len(), done)
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Response {
    let runs: Vec<_> = state
        .runs
        .values()
        .map(|r| {
            let (total, annotated) = run_counts(r);
            json!({
                "run": r.meta.run_id,
                "method": r.meta.method,
                "model": r.meta.model,
                "dataset": r.meta.dataset.name,
                "total": total,
                "annotated": annotated,
                "pending": total - annotated,
            })
        })
        .collect();
    Json(json!({ "runs": runs })).into_response()
}

#[derive(Debug, Deserialize)]
struct TasksQuery {
    run: Option<String>,
    cursor: Option<String>,
    limit: Option<usize>,
}

async fn list_tasks(State(state): State<Arc<AppState>>, Query(q): Query<TasksQuery>) -> Response {
    let run = match state.pick(q.run.as_deref()) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let start = match q.cursor.as_deref().map(str::parse::<usize>) {
        None => 0,
        Some(Ok(n)) => n,
        Some(Err(_)) => return error_response(StatusCode::BAD_REQUEST, "cursor must be a non-negative integer"),
    };
    let limit = q.limit.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
    let page: Vec<_> = run
        .tasks
        .iter()
        .skip(start)
        .take(limit)
        .map(|t| {
            json!({
                "trace_id": t.trace_id,
                "instance_id": t.instance_id,
                "claim": t.claim,
                "parse_status": t.parse_status,
                "sub_claims": t.sub_claims.len(),
                "needs_raw_review": t.needs_raw_review,
                "annotators": run.store.annotators(&t.trace_id),
            })
        })
        .collect();
    let end = start.saturating_add(page.len());
    let next = (end < run.tasks.len()).then(|| end.to_string());
    let (total, annotated) = run_counts(run);
    Json(json!({
        "run": run.meta.run_id,
        "total": total,
        "annotated": annotated,
        "pending": total - annotated,
        "tasks": page,
        "next_cursor": next,
    }))
    .into_response()
}

async fn get_task(State(state): State<Arc<AppState>>, UrlPath(trace_id): UrlPath<String>) -> Response {
    let Some(run) = state.trace_run(&trace_id) else {
        return error_response(StatusCode::NOT_FOUND, format!("unknown trace `{trace_id}`"));
    };
    let task = run.task(&trace_id).expect("trace_run checked the task");
    let mut body = serde_json::to_value(task).expect("task serializes");
    body["annotations"] = serde_json::to_value(run.store.history(&trace_id)).expect("history serializes");
    Json(body).into_response()
}

async fn post_annotation(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let record: AnnotationRecord = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return field_errors(&[FieldError::new("body", e.to_string())]),
    };
    if let Some(header) = headers.get(ANNOTATOR_HEADER) {
        if header.to_str().ok() != Some(record.annotator_id.as_str()) {
            return field_errors(&[FieldError::new(
                "annotator_id",
                format!("does not match the {ANNOTATOR_HEADER} header"),
            )]);
        }
    }
    let Some(run) = state.trace_run(&record.trace_id) else {
        return error_response(StatusCode::NOT_FOUND, format!("unknown trace `{}`", record.trace_id));
    };
    match run.submit(record) {
        Ok(stored) => (
            StatusCode::CREATED,
            Json(json!({
                "trace_id": stored.record.trace_id,
                "annotator_id": stored.record.annotator_id,
                "version": stored.version,
                "timestamp": stored.record.timestamp,
            })),
        )
            .into_response(),
        Err(SubmitError::Invalid(errors)) => field_errors(&errors),
        Err(SubmitError::UnknownTrace(t)) => error_response(StatusCode::NOT_FOUND, format!("unknown trace `{t}`")),
        Err(SubmitError::Store(e)) => {
            tracing::error!("annotation store: {e}");
            error_response(StatusCode::INTERNAL_SERVER_ERROR, "failed to store annotation")
        }
    }
}

#[derive(Debug, Deserialize)]
struct SummaryQuery {
    run: Option<String>,
    annotator: Option<String>,
}

async fn summary(State(state): State<Arc<AppState>>, Query(q): Query<SummaryQuery>) -> Response {
    let run = match state.pick(q.run.as_deref()) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match run.metric_summary(q.annotator.as_deref()) {
        Ok(s) => Json(s.to_json()).into_response(),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}
