//! Building blocks for guided entailment reasoning over hallucination
//! detection data.
//!
//! A claim is checked against a source document in three steps: the claim
//! is decomposed into sub-claims, each sub-claim is attributed to evidence
//! and given a 3-way entailment label, and the labels are aggregated into a
//! binary verdict. This crate holds the pieces that do not talk to a model:
//!
//! - [`label`]: the label algebra and the aggregation rule.
//! - [`types`]: instances, traces and annotation records.
//! - [`prompt`]: prompt templates for every method variant.
//! - [`parser`]: turning raw model responses into [`ReasoningTrace`]s.
//! - [`metrics`]: the six reasoning-quality metrics and accuracy.
//! - [`dataset`]: ingest, balanced sampling and run archives.

pub mod archive;
pub mod dataset;
pub mod digest;
pub mod label;
pub mod metrics;
pub mod parser;
pub mod prompt;
pub mod types;

pub use label::{aggregate, collapse, AggregateError, BinaryVerdict, EntailmentLabel};
pub use prompt::MethodId;
pub use types::{
    AnnotationRecord, Attribution, ParseStatus, ReasoningTrace, SubClaimRecord,
    VerificationInstance,
};
