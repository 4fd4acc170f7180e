//! One experiment cell: every sampled instance is rendered, sent, parsed
//! and recorded in a run directory.

use std::collections::HashSet;
use std::path::Path;

use futures::stream::{self, StreamExt};

use entailscope_core::archive::{DatasetRef, RowStatus, RunDir, RunMeta, RunRow, RunSummary, SampleRef};
use entailscope_core::parser::TraceParser;
use entailscope_core::prompt::{MethodId, TemplateSet};
use entailscope_core::types::VerificationInstance;
use entailscope_gateway::{prompt_hash, Gateway, ModelSpec};

use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub run_id: String,
    pub method: MethodId,
    pub model: ModelSpec,
    /// Requested chain-of-thought line; dropped for reasoning models.
    pub cot: bool,
    pub dataset: DatasetRef,
    pub sample: SampleRef,
    pub instances: Vec<VerificationInstance>,
}

impl RunSpec {
    pub fn meta(&self, templates: &TemplateSet) -> Result<RunMeta, HarnessError> {
        if self.run_id.is_empty() || self.run_id.contains([':', '/', '\\']) {
            return Err(HarnessError::Input(format!(
                "run id `{}` must be non-empty and free of ':' and path separators",
                self.run_id
            )));
        }
        Ok(RunMeta {
            run_id: self.run_id.clone(),
            method: self.method,
            model: self.model.id(),
            model_spec: serde_json::to_value(&self.model).expect("model spec serializes"),
            cot: self.model.effective_cot(self.cot),
            template_hash: templates.template_hash(self.method)?.to_string(),
            dataset: self.dataset.clone(),
            sample: self.sample.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    /// Instances processed in this invocation (not resumed from disk).
    pub processed: usize,
    /// Requests that reached a backend during this invocation.
    pub backend_calls: u64,
}

/// Runs (or resumes) the cell described by `spec` in `dir`.
///
/// Completed rows already on disk are kept; skipped ones are retried.
/// Rows are appended in sample order while up to the provider's limit of
/// requests are in flight.
pub async fn run_experiment(
    gateway: &Gateway,
    templates: &TemplateSet,
    parser: &TraceParser,
    spec: &RunSpec,
    dir: &Path,
) -> Result<RunOutcome, HarnessError> {
    let meta = spec.meta(templates)?;
    let run = RunDir::create(dir, &meta)?;
    run.write_instances(&spec.instances)?;
    let done: HashSet<String> = run
        .rows()?
        .into_iter()
        .filter(|r| r.status == RowStatus::Completed)
        .map(|r| r.instance_id)
        .collect();
    let pending: Vec<&VerificationInstance> = spec
        .instances
        .iter()
        .filter(|i| !done.contains(&i.instance_id))
        .collect();

    let calls_before = gateway.backend_calls();
    let limit = gateway.limit(&spec.model.provider_id);
    let mut results = stream::iter(pending.iter().copied())
        .map(|inst| process(gateway, templates, parser, &run, &meta, &spec.model, inst))
        .buffered(limit);
    let mut processed = 0;
    while let Some(row) = results.next().await {
        run.append_row(&row?)?;
        processed += 1;
    }
    drop(results);

    let summary = RunSummary::from_rows(&run.rows()?);
    run.write_summary(&summary)?;
    if summary.degraded {
        tracing::warn!(run = %meta.run_id, skipped = summary.skipped, "run degraded: more than 5% of instances skipped");
    }
    Ok(RunOutcome {
        summary,
        processed,
        backend_calls: gateway.backend_calls() - calls_before,
    })
}

async fn process(
    gateway: &Gateway,
    templates: &TemplateSet,
    parser: &TraceParser,
    run: &RunDir,
    meta: &RunMeta,
    model: &ModelSpec,
    inst: &VerificationInstance,
) -> Result<RunRow, HarnessError> {
    let prompt = templates.render(meta.method, inst, meta.cot)?;
    let hash = prompt_hash(&meta.template_hash, &prompt, model);
    let record = match gateway.cached_complete(model, &meta.template_hash, &prompt).await {
        Ok(r) => r,
        Err(e) if e.is_per_instance() => {
            tracing::warn!(run = %meta.run_id, instance = %inst.instance_id, "skipped: {e}");
            return Ok(RunRow::skipped(inst, hash, format!("{}: {e}", e.kind())));
        }
        Err(e) => return Err(e.into()),
    };
    let mut trace = parser.extract_trace(&record.response_text, record.thinking_text.as_deref(), meta.method);
    trace.resolve_attributions(&inst.source);
    let response_sha = run.put_blob(&record.response_text)?;
    let thinking_sha = record.thinking_text.as_deref().map(|t| run.put_blob(t)).transpose()?;
    Ok(RunRow::completed(inst, hash, &trace, response_sha, thinking_sha, record.attempt))
}
