//! Adapter from question-answering traces to sub-claim records.
//!
//! Questions play the role of the decomposition, answers taken from the
//! source are the attribution, and the comparison between claim-side and
//! source-side answers is the entailment label. Two layouts are read:
//! separate sections ("Questions:", "Answers based on the document:",
//! "Comparison:", each a numbered list), or one numbered list of questions
//! with keyed lines underneath ("Document answer: ...", "Comparison: ...").

use std::sync::LazyLock;

use regex::Regex;

use super::keywords::{Cue, KeywordTable};
use super::lists::{classify_lines, find_lists, ItemList, Line, LineKind};
use crate::label::EntailmentLabel;
use crate::types::{Attribution, SubClaimRecord};

static SOURCE_KEY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\W*(?:(?:answer\s+)?(?:from|based on|per)\s+(?:the\s+)?)?(?:document|source)(?:'s|s')?\s*(?:answer|says)?\s*:").unwrap()
});
static CLAIM_KEY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\W*(?:(?:answer\s+)?(?:from|based on|per)\s+(?:the\s+)?)?claim(?:'s|s')?\s*(?:answer|says)?\s*:").unwrap()
});
static COMPARISON_KEY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\W*(?:comparison|compare|match|verdict|assessment|result|similar(?:ity)?)\s*\??\s*:").unwrap()
});
static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""([^"\n]+)"|“([^”\n]+)”"#).unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Questions,
    ClaimAnswers,
    SourceAnswers,
    Comparison,
    Other,
}

fn section_of(table: &KeywordTable, text: &str) -> Section {
    // order matters: "Check if the documents' answers and the claims'
    // answers are similar" is a comparison heading
    if table.matches(Cue::QaComparison, text) {
        Section::Comparison
    } else if table.matches(Cue::QaSourceAnswers, text) {
        Section::SourceAnswers
    } else if table.matches(Cue::QaClaimAnswers, text) {
        Section::ClaimAnswers
    } else if table.matches(Cue::QaQuestions, text) {
        Section::Questions
    } else {
        Section::Other
    }
}

#[derive(Debug, Default, Clone)]
struct QaItem {
    question: String,
    source_answer: Option<String>,
    comparison: Option<String>,
}

fn clean(text: &str) -> String {
    text.trim().trim_matches('*').trim().to_string()
}

fn after_key<'a>(re: &Regex, line: &'a str) -> Option<&'a str> {
    re.find(line).map(|m| line[m.end()..].trim())
}

pub(crate) fn adapt(table: &KeywordTable, text: &str) -> Vec<SubClaimRecord> {
    let lines: Vec<Line<'_>> = classify_lines(text);
    let lists = find_lists(&lines);
    let section = |list: &ItemList| {
        list.context_line
            .filter(|i| !matches!(lines[*i].kind, LineKind::Item { .. }))
            .map_or(Section::Other, |i| section_of(table, lines[i].text))
    };

    let question_list = lists
        .iter()
        .find(|l| section(l) == Section::Questions)
        .or_else(|| {
            lists.iter().find(|l| {
                let asks = l.items.iter().filter(|i| i.head.trim_end().ends_with('?')).count();
                asks * 2 > l.items.len()
            })
        });
    let Some(question_list) = question_list else {
        return Vec::new();
    };

    let mut items: Vec<QaItem> = question_list
        .items
        .iter()
        .map(|item| {
            let mut qa = QaItem {
                question: clean(&item.head),
                ..QaItem::default()
            };
            for line in &item.continuation {
                let line = line.trim_start_matches(|c: char| c == '-' || c == '*' || c.is_whitespace());
                if let Some(v) = after_key(&SOURCE_KEY, line) {
                    qa.source_answer = Some(v.to_string());
                } else if CLAIM_KEY.is_match(line) {
                    // claim-side answers carry no evidence
                } else if let Some(v) = after_key(&COMPARISON_KEY, line) {
                    qa.comparison = Some(v.to_string());
                }
            }
            qa
        })
        .collect();

    let n = items.len();
    for list in lists.iter().filter(|l| l.start_line > question_list.start_line && l.items.len() == n) {
        match section(list) {
            Section::SourceAnswers => {
                for (qa, item) in items.iter_mut().zip(&list.items) {
                    qa.source_answer = Some(item.block());
                }
            }
            Section::Comparison => {
                for (qa, item) in items.iter_mut().zip(&list.items) {
                    qa.comparison = Some(item.block());
                }
            }
            _ => {}
        }
    }

    items
        .into_iter()
        .filter(|qa| !qa.question.is_empty())
        .map(|qa| to_record(table, qa))
        .collect()
}

fn to_record(table: &KeywordTable, qa: QaItem) -> SubClaimRecord {
    let unanswered = qa
        .source_answer
        .as_deref()
        .is_none_or(|a| a.trim().is_empty() || table.matches(Cue::QaUnanswered, a));
    let label = if unanswered {
        EntailmentLabel::Neutral
    } else {
        qa.comparison
            .as_deref()
            .map_or(EntailmentLabel::Neutral, |c| comparison_label(table, c))
    };
    let attribution = if unanswered {
        None
    } else {
        qa.source_answer.map(|answer| {
            let evidence = QUOTED
                .captures(&answer)
                .and_then(|c| c.get(1).or_else(|| c.get(2)))
                .map_or_else(|| clean(&answer), |m| m.as_str().trim().to_string());
            Attribution::new(evidence)
        })
    };
    SubClaimRecord {
        text: qa.question,
        attribution,
        label,
    }
}

fn comparison_label(table: &KeywordTable, text: &str) -> EntailmentLabel {
    if table.matches(Cue::QaConflict, text) {
        EntailmentLabel::Contradicted
    } else if table.matches(Cue::QaMismatch, text) || table.matches(Cue::QaUnanswered, text) {
        EntailmentLabel::Neutral
    } else if table.matches(Cue::QaMatch, text) {
        EntailmentLabel::Entailed
    } else {
        table.classify(text).unwrap_or(EntailmentLabel::Neutral)
    }
}
