//! Experiment orchestration, report tables and the annotation service.
//!
//! - [`experiment`]: render, complete, parse and record one experiment cell.
//! - [`report`]: accuracy deltas, averaged method tables and metric summaries.
//! - [`annotate`]: annotation tasks, the versioned annotation store and the
//!   HTTP API served to annotators.

pub mod annotate;
pub mod config;
pub mod experiment;
pub mod report;

use thiserror::Error;

use entailscope_core::archive::ArchiveError;
use entailscope_core::dataset::DatasetError;
use entailscope_core::parser::keywords::KeywordError;
use entailscope_core::prompt::PromptError;
use entailscope_gateway::GatewayError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Keywords(#[from] KeywordError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("runs were not drawn from the same sample: {0}")]
    SampleMismatch(String),
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
