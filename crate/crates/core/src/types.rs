//! Domain types shared across the pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{aggregate, BinaryVerdict, EntailmentLabel};
use crate::prompt::MethodId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("source document is empty")]
    EmptySource,
    #[error("claim is empty")]
    EmptyClaim,
    #[error("instance id is empty")]
    EmptyId,
}

/// A (source, claim, gold label) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationInstance {
    pub instance_id: String,
    pub source: String,
    pub claim: String,
    pub gold_label: BinaryVerdict,
    pub dataset_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_model: Option<String>,
}

impl VerificationInstance {
    pub fn new(
        instance_id: impl Into<String>,
        source: impl Into<String>,
        claim: impl Into<String>,
        gold_label: BinaryVerdict,
        dataset_name: impl Into<String>,
    ) -> Result<Self, InstanceError> {
        let instance = Self {
            instance_id: instance_id.into(),
            source: source.into(),
            claim: claim.into(),
            gold_label,
            dataset_name: dataset_name.into(),
            origin_model: None,
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn with_origin_model(mut self, model: impl Into<String>) -> Self {
        self.origin_model = Some(model.into());
        self
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.instance_id.trim().is_empty() {
            return Err(InstanceError::EmptyId);
        }
        if self.source.trim().is_empty() {
            return Err(InstanceError::EmptySource);
        }
        if self.claim.trim().is_empty() {
            return Err(InstanceError::EmptyClaim);
        }
        Ok(())
    }
}

/// Byte range into the source document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

/// Evidence quoted by the model for a sub-claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
}

impl Attribution {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            span: None,
        }
    }

    /// Locates the quoted text inside `source` with a case-insensitive
    /// substring match. Leaves `span` unset when the quote does not occur
    /// verbatim.
    pub fn resolve(&mut self, source: &str) {
        self.span = find_case_insensitive(source, self.text.trim());
    }
}

fn find_case_insensitive(haystack: &str, needle: &str) -> Option<Span> {
    if needle.is_empty() {
        return None;
    }
    let pattern = format!("(?i){}", regex::escape(needle));
    let re = regex::Regex::new(&pattern).ok()?;
    re.find(haystack).map(|m| Span {
        start: m.start(),
        end: m.end(),
    })
}

/// One decomposed sub-claim with its evidence and predicted label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubClaimRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<Attribution>,
    pub label: EntailmentLabel,
}

impl SubClaimRecord {
    pub fn new(text: impl Into<String>, label: EntailmentLabel) -> Self {
        Self {
            text: text.into(),
            attribution: None,
            label,
        }
    }

    pub fn with_attribution(mut self, evidence: impl Into<String>) -> Self {
        self.attribution = Some(Attribution::new(evidence));
        self
    }

    /// Entailed and contradicted labels should cite evidence.
    pub fn missing_expected_attribution(&self) -> bool {
        self.label != EntailmentLabel::Neutral && self.attribution.is_none()
    }
}

/// How much structure could be recovered from a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Full,
    VerdictOnly,
    Failed,
}

impl ParseStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseStatus::Full => "full",
            ParseStatus::VerdictOnly => "verdict_only",
            ParseStatus::Failed => "failed",
        }
    }
}

/// Structured view of one model response. The parse status is derived
/// from the content, never set independently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "TraceRepr", try_from = "TraceRepr")]
pub struct ReasoningTrace {
    pub sub_claims: Vec<SubClaimRecord>,
    pub final_verdict: Option<BinaryVerdict>,
    pub raw_response: String,
    pub reasoning_text: Option<String>,
    pub method: MethodId,
}

impl ReasoningTrace {
    pub fn new(
        sub_claims: Vec<SubClaimRecord>,
        final_verdict: Option<BinaryVerdict>,
        raw_response: impl Into<String>,
        reasoning_text: Option<String>,
        method: MethodId,
    ) -> Self {
        Self {
            sub_claims,
            final_verdict,
            raw_response: raw_response.into(),
            reasoning_text,
            method,
        }
    }

    pub fn parse_status(&self) -> ParseStatus {
        match (self.sub_claims.is_empty(), self.final_verdict) {
            (false, Some(_)) => ParseStatus::Full,
            (true, Some(_)) => ParseStatus::VerdictOnly,
            (_, None) => ParseStatus::Failed,
        }
    }

    pub fn labels(&self) -> Vec<EntailmentLabel> {
        self.sub_claims.iter().map(|s| s.label).collect()
    }

    /// Verdict implied by the sub-claim labels, if there are any.
    pub fn aggregated_verdict(&self) -> Option<BinaryVerdict> {
        aggregate(&self.labels()).ok()
    }

    /// True when the stated verdict disagrees with the aggregation of the
    /// model's own sub-claim labels.
    pub fn verdict_disagrees(&self) -> bool {
        matches!(
            (self.final_verdict, self.aggregated_verdict()),
            (Some(stated), Some(implied)) if stated != implied
        )
    }

    /// Resolves every attribution against `source`.
    pub fn resolve_attributions(&mut self, source: &str) {
        for sub in &mut self.sub_claims {
            if let Some(attr) = sub.attribution.as_mut() {
                attr.resolve(source);
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TraceRepr {
    sub_claims: Vec<SubClaimRecord>,
    final_verdict: Option<BinaryVerdict>,
    raw_response: String,
    #[serde(default)]
    reasoning_text: Option<String>,
    method: MethodId,
    parse_status: ParseStatus,
}

impl From<ReasoningTrace> for TraceRepr {
    fn from(t: ReasoningTrace) -> Self {
        let parse_status = t.parse_status();
        TraceRepr {
            sub_claims: t.sub_claims,
            final_verdict: t.final_verdict,
            raw_response: t.raw_response,
            reasoning_text: t.reasoning_text,
            method: t.method,
            parse_status,
        }
    }
}

impl TryFrom<TraceRepr> for ReasoningTrace {
    type Error = String;

    fn try_from(r: TraceRepr) -> Result<Self, Self::Error> {
        let trace = ReasoningTrace {
            sub_claims: r.sub_claims,
            final_verdict: r.final_verdict,
            raw_response: r.raw_response,
            reasoning_text: r.reasoning_text,
            method: r.method,
        };
        if trace.parse_status() != r.parse_status {
            return Err(format!(
                "parse_status `{}` inconsistent with trace content (expected `{}`)",
                r.parse_status.as_str(),
                trace.parse_status().as_str()
            ));
        }
        Ok(trace)
    }
}

/// Human judgments over one trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub trace_id: String,
    pub annotator_id: String,
    pub sound_flags: Vec<bool>,
    pub complete: bool,
    pub attribution_flags: Vec<bool>,
    pub gold_sub_labels: Vec<EntailmentLabel>,
    #[serde(default)]
    pub timestamp: String,
}

/// A rejected annotation field and the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl AnnotationRecord {
    /// Checks the record against a trace with `n_sub_claims` sub-claims.
    /// Returns every violation, not just the first.
    pub fn validate(&self, n_sub_claims: usize) -> Result<(), Vec<FieldError>> {
        let mut errors = Vec::new();
        if self.trace_id.trim().is_empty() {
            errors.push(FieldError::new("trace_id", "must not be empty"));
        }
        if self.annotator_id.trim().is_empty() {
            errors.push(FieldError::new("annotator_id", "must not be empty"));
        }
        let lists = [
            ("sound_flags", self.sound_flags.len()),
            ("attribution_flags", self.attribution_flags.len()),
            ("gold_sub_labels", self.gold_sub_labels.len()),
        ];
        for (field, len) in lists {
            if len != n_sub_claims {
                errors.push(FieldError::new(
                    field,
                    format!("expected {n_sub_claims} entries (one per sub-claim), got {len}"),
                ));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}
