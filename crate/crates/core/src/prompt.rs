//! Prompt templates for each reasoning method.
//!
//! Templates are plain UTF-8 files named `<method_id>.prompt`. They use
//! double-brace placeholders: `{{document}}` and `{{claim}}` (each exactly
//! once), an optional `{{example}}` slot filled with the decomposition
//! example, and a trailing `{{cot}}` slot for the chain-of-thought line.
//! A literal `{{` or `}}` is written by doubling it (`{{{{`, `}}}}`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_fields;
use crate::types::VerificationInstance;

/// Line appended for standard (non-reasoning) models.
pub const COT_LINE: &str = "Think step by step.";

/// Sentence every template ends with, before the optional CoT line.
pub const VERDICT_INSTRUCTION: &str =
    "Conclude your response with either \"yes\" (the claim is supported) or \"no\" (the claim is not supported).";

pub const EXAMPLE_FILE: &str = "decomposition_example.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "clatter")]
    Clatter,
    #[serde(rename = "qa_based")]
    QaBased,
    #[serde(rename = "decomposition_only")]
    DecompositionOnly,
    #[serde(rename = "ablate_decomp")]
    AblateDecomp,
    #[serde(rename = "ablate_3way")]
    Ablate3Way,
    #[serde(rename = "ablate_attribution")]
    AblateAttribution,
}

impl MethodId {
    pub const ALL: [MethodId; 7] = [
        MethodId::Baseline,
        MethodId::Clatter,
        MethodId::QaBased,
        MethodId::DecompositionOnly,
        MethodId::AblateDecomp,
        MethodId::Ablate3Way,
        MethodId::AblateAttribution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Baseline => "baseline",
            MethodId::Clatter => "clatter",
            MethodId::QaBased => "qa_based",
            MethodId::DecompositionOnly => "decomposition_only",
            MethodId::AblateDecomp => "ablate_decomp",
            MethodId::Ablate3Way => "ablate_3way",
            MethodId::AblateAttribution => "ablate_attribution",
        }
    }

    /// Methods whose sub-claim labels are binary (supported / not supported).
    pub fn is_binary_labelled(self) -> bool {
        matches!(self, MethodId::AblateDecomp | MethodId::DecompositionOnly)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown method id `{0}`")]
pub struct UnknownMethod(pub String);

impl FromStr for MethodId {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    UnknownMethod(#[from] UnknownMethod),
    #[error("no template loaded for method `{0}`")]
    MissingTemplate(MethodId),
    #[error("template `{name}`: {reason}")]
    Malformed { name: String, reason: String },
    #[error("reading template `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(Slot),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Document,
    Claim,
    Example,
    Cot,
}

impl Slot {
    fn from_name(name: &str) -> Option<Slot> {
        match name.trim() {
            "document" => Some(Slot::Document),
            "claim" => Some(Slot::Claim),
            "example" => Some(Slot::Example),
            "cot" => Some(Slot::Cot),
            _ => None,
        }
    }
}

/// A parsed template for one method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub method: MethodId,
    shell_text: String,
    pieces: Vec<Piece>,
    hash: String,
}

fn tokenize(name: &str, text: &str) -> Result<Vec<Piece>, PromptError> {
    let malformed = |reason: String| PromptError::Malformed {
        name: name.to_string(),
        reason,
    };
    let mut pieces = Vec::new();
    let mut buf = String::new();
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix("{{{{") {
            buf.push_str("{{");
            rest = after;
        } else if let Some(after) = rest.strip_prefix("}}}}") {
            buf.push_str("}}");
            rest = after;
        } else if let Some(after) = rest.strip_prefix("{{") {
            let end = after
                .find("}}")
                .ok_or_else(|| malformed("unterminated placeholder".into()))?;
            let slot_name = &after[..end];
            let slot = Slot::from_name(slot_name)
                .ok_or_else(|| malformed(format!("unknown placeholder `{{{{{slot_name}}}}}`")))?;
            if !buf.is_empty() {
                pieces.push(Piece::Text(std::mem::take(&mut buf)));
            }
            pieces.push(Piece::Slot(slot));
            rest = &after[end + 2..];
        } else {
            let ch = rest.chars().next().expect("non-empty");
            buf.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
    }
    if !buf.is_empty() {
        pieces.push(Piece::Text(buf));
    }
    Ok(pieces)
}

impl PromptTemplate {
    pub fn parse(method: MethodId, shell_text: &str) -> Result<Self, PromptError> {
        let name = format!("{method}.prompt");
        let pieces = tokenize(&name, shell_text)?;
        let count = |slot: Slot| pieces.iter().filter(|p| **p == Piece::Slot(slot)).count();
        let malformed = |reason: &str| PromptError::Malformed {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if count(Slot::Document) != 1 {
            return Err(malformed("`{{document}}` must appear exactly once"));
        }
        if count(Slot::Claim) != 1 {
            return Err(malformed("`{{claim}}` must appear exactly once"));
        }
        if count(Slot::Example) > 1 {
            return Err(malformed("`{{example}}` may appear at most once"));
        }
        if pieces.last() != Some(&Piece::Slot(Slot::Cot)) || count(Slot::Cot) != 1 {
            return Err(malformed("template must end with a single `{{cot}}` slot"));
        }
        let before_cot = match &pieces[pieces.len().saturating_sub(2)] {
            Piece::Text(t) => t.trim_end(),
            Piece::Slot(_) => "",
        };
        if !before_cot.ends_with(VERDICT_INSTRUCTION) {
            return Err(malformed("verdict instruction must directly precede `{{cot}}`"));
        }
        Ok(Self {
            method,
            shell_text: shell_text.to_string(),
            pieces,
            hash: String::new(),
        })
    }

    pub fn shell_text(&self) -> &str {
        &self.shell_text
    }

    pub fn uses_example(&self) -> bool {
        self.pieces.contains(&Piece::Slot(Slot::Example))
    }

    /// Digest of the template text and, when used, the example text.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn render_with(&self, example: &str, document: &str, claim: &str, cot: bool) -> String {
        let mut out = String::with_capacity(self.shell_text.len() + document.len() + claim.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(Slot::Document) => out.push_str(document),
                Piece::Slot(Slot::Claim) => out.push_str(claim),
                Piece::Slot(Slot::Example) => out.push_str(example),
                Piece::Slot(Slot::Cot) => {
                    if cot {
                        out.push_str("\n\n");
                        out.push_str(COT_LINE);
                    }
                }
            }
        }
        out
    }
}

/// All method templates plus the shared decomposition example.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<MethodId, PromptTemplate>,
    example: String,
}

const BUILTIN: [(MethodId, &str); 7] = [
    (MethodId::Baseline, include_str!("../assets/prompts/baseline.prompt")),
    (MethodId::Clatter, include_str!("../assets/prompts/clatter.prompt")),
    (MethodId::QaBased, include_str!("../assets/prompts/qa_based.prompt")),
    (
        MethodId::DecompositionOnly,
        include_str!("../assets/prompts/decomposition_only.prompt"),
    ),
    (MethodId::AblateDecomp, include_str!("../assets/prompts/ablate_decomp.prompt")),
    (MethodId::Ablate3Way, include_str!("../assets/prompts/ablate_3way.prompt")),
    (
        MethodId::AblateAttribution,
        include_str!("../assets/prompts/ablate_attribution.prompt"),
    ),
];

const BUILTIN_EXAMPLE: &str = include_str!("../assets/prompts/decomposition_example.txt");

impl TemplateSet {
    /// Templates compiled into the binary from `assets/prompts`.
    pub fn builtin() -> Self {
        let sources = BUILTIN.iter().map(|(m, t)| (*m, t.to_string()));
        Self::from_sources(sources, BUILTIN_EXAMPLE.to_string())
            .expect("builtin templates are well-formed")
    }

    /// Loads every `<method_id>.prompt` file in `dir`, plus
    /// `decomposition_example.txt`. Missing method files fall back to
    /// nothing: rendering that method fails with `MissingTemplate`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |path: &Path| {
            std::fs::read_to_string(path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let example = read(&dir.join(EXAMPLE_FILE))?;
        let mut sources = Vec::new();
        for method in MethodId::ALL {
            let path = dir.join(format!("{method}.prompt"));
            if path.exists() {
                sources.push((method, read(&path)?));
            }
        }
        Self::from_sources(sources, example)
    }

    pub fn from_sources(
        sources: impl IntoIterator<Item = (MethodId, String)>,
        example: String,
    ) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for (method, text) in sources {
            let mut template = PromptTemplate::parse(method, &text)?;
            let example_bytes: &[u8] = if template.uses_example() {
                example.as_bytes()
            } else {
                b""
            };
            template.hash = sha256_fields([text.as_bytes(), example_bytes]);
            templates.insert(method, template);
        }
        Ok(Self { templates, example })
    }

    pub fn get(&self, method: MethodId) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(&method)
            .ok_or(PromptError::MissingTemplate(method))
    }

    pub fn template_hash(&self, method: MethodId) -> Result<&str, PromptError> {
        Ok(self.get(method)?.hash())
    }

    /// Template hashes for every loaded method, for stamping into archives.
    pub fn hashes(&self) -> BTreeMap<MethodId, String> {
        self.templates
            .iter()
            .map(|(m, t)| (*m, t.hash.clone()))
            .collect()
    }

    /// Renders the prompt for `instance` under `method`. With `cot` set, the
    /// chain-of-thought line is appended after the verdict instruction.
    pub fn render(
        &self,
        method: MethodId,
        instance: &VerificationInstance,
        cot: bool,
    ) -> Result<String, PromptError> {
        let template = self.get(method)?;
        Ok(template.render_with(&self.example, &instance.source, &instance.claim, cot))
    }

    /// Like [`render`](Self::render) but takes the method id as a string.
    pub fn render_named(
        &self,
        method: &str,
        instance: &VerificationInstance,
        cot: bool,
    ) -> Result<String, PromptError> {
        self.render(method.parse()?, instance, cot)
    }
}
