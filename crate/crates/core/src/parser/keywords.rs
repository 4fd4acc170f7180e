//! The keyword and cue-phrase table that drives trace parsing.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::label::EntailmentLabel;

const BUILTIN: &str = include_str!("../../assets/keywords.tsv");

#[derive(Debug, Error)]
pub enum KeywordError {
    #[error("line {line}: expected `<label>\\t<regex>`")]
    MissingTab { line: usize },
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: {source}")]
    BadRegex {
        line: usize,
        #[source]
        source: regex::Error,
    },
    #[error("reading keyword table: {0}")]
    Io(#[from] std::io::Error),
}

/// What a pattern recognises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cue {
    Label(EntailmentLabel),
    Decomposition,
    Evidence,
    LabelKey,
    NoEvidence,
    QaQuestions,
    QaClaimAnswers,
    QaSourceAnswers,
    QaComparison,
    QaConflict,
    QaMismatch,
    QaMatch,
    QaUnanswered,
}

impl Cue {
    fn from_name(name: &str) -> Option<Cue> {
        Some(match name {
            "entailed" => Cue::Label(EntailmentLabel::Entailed),
            "contradicted" => Cue::Label(EntailmentLabel::Contradicted),
            "neutral" => Cue::Label(EntailmentLabel::Neutral),
            "cue.decomposition" => Cue::Decomposition,
            "cue.evidence" => Cue::Evidence,
            "cue.label" => Cue::LabelKey,
            "cue.no_evidence" => Cue::NoEvidence,
            "qa.questions" => Cue::QaQuestions,
            "qa.claim_answers" => Cue::QaClaimAnswers,
            "qa.source_answers" => Cue::QaSourceAnswers,
            "qa.comparison" => Cue::QaComparison,
            "qa.conflict" => Cue::QaConflict,
            "qa.mismatch" => Cue::QaMismatch,
            "qa.match" => Cue::QaMatch,
            "qa.unanswered" => Cue::QaUnanswered,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct KeywordTable {
    entries: Vec<(Cue, Regex)>,
}

impl Default for KeywordTable {
    fn default() -> Self {
        Self::builtin()
    }
}

impl KeywordTable {
    pub fn builtin() -> Self {
        static TABLE: LazyLock<KeywordTable> =
            LazyLock::new(|| KeywordTable::parse(BUILTIN).expect("builtin keyword table is valid"));
        TABLE.clone()
    }

    pub fn load(path: &Path) -> Result<Self, KeywordError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, KeywordError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let (name, pattern) = raw.split_once('\t').ok_or(KeywordError::MissingTab { line })?;
            let cue = Cue::from_name(name.trim()).ok_or_else(|| KeywordError::UnknownLabel {
                line,
                label: name.to_string(),
            })?;
            let re = Regex::new(pattern).map_err(|source| KeywordError::BadRegex { line, source })?;
            entries.push((cue, re));
        }
        Ok(Self { entries })
    }

    fn patterns(&self, cue: Cue) -> impl Iterator<Item = &Regex> {
        self.entries.iter().filter(move |(c, _)| *c == cue).map(|(_, r)| r)
    }

    pub fn matches(&self, cue: Cue, text: &str) -> bool {
        self.patterns(cue).any(|r| r.is_match(text))
    }

    /// Earliest match of `cue` in `text` as a byte range.
    pub fn find(&self, cue: Cue, text: &str) -> Option<(usize, usize)> {
        self.patterns(cue)
            .filter_map(|r| r.find(text))
            .map(|m| (m.start(), m.end()))
            .min_by_key(|(s, e)| (*s, std::cmp::Reverse(*e)))
    }

    /// The entailment label named in `text`. Matches nested inside a longer
    /// match are discarded (so "not supported" is not read as "supported"),
    /// then the last remaining match wins.
    pub fn classify(&self, text: &str) -> Option<EntailmentLabel> {
        let mut hits: Vec<(usize, usize, EntailmentLabel)> = Vec::new();
        for (cue, re) in &self.entries {
            if let Cue::Label(label) = cue {
                hits.extend(re.find_iter(text).map(|m| (m.start(), m.end(), *label)));
            }
        }
        let outermost = hits.iter().filter(|(s, e, _)| {
            !hits
                .iter()
                .any(|(s2, e2, _)| s2 <= s && e <= e2 && (e2 - s2) > (e - s))
        });
        outermost
            .max_by_key(|(s, e, _)| (*s, *e))
            .map(|(_, _, label)| *label)
    }
}
