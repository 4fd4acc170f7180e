//! Pulling sub-claim text, evidence and label out of one list item.

use std::sync::LazyLock;

use regex::Regex;

use super::keywords::{Cue, KeywordTable};
use crate::label::EntailmentLabel;

static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""([^"\n]+)"|“([^”\n]+)”"#).unwrap());
// A separator followed by a label keyword ends the sub-claim text, e.g.
// "The motorcycle is blue — Supported" or "X (neutral)".
static LABEL_SEPARATOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:\s+[-–—]+>?\s+|\s*(?:→|->|=>)\s*|\s+\(|\s*[:;|]\s+)\W{0,3}").unwrap());

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct ParsedItem {
    pub text: String,
    pub evidence: Option<String>,
    pub label: Option<EntailmentLabel>,
}

/// Quoted spans in `text` as (outer range, inner content).
fn quotes(text: &str) -> Vec<((usize, usize), String)> {
    QUOTED
        .captures_iter(text)
        .filter_map(|c| {
            let whole = c.get(0)?;
            let inner = c.get(1).or_else(|| c.get(2))?;
            Some(((whole.start(), whole.end()), inner.as_str().trim().to_string()))
        })
        .collect()
}

fn strip_decoration(text: &str) -> String {
    let t = text.trim().trim_matches('*').trim();
    let t = t.trim_end_matches(|c: char| matches!(c, ':' | '-' | '–' | '—' | ',' | ';' | '|'));
    let t = t.trim().trim_matches('*').trim();
    let unquoted = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"').or_else(|| s.strip_suffix("\".")))
        .or_else(|| t.strip_prefix('“').and_then(|s| s.strip_suffix('”')))
        .unwrap_or(t);
    unquoted.trim().to_string()
}

fn without_quotes(text: &str) -> String {
    QUOTED.replace_all(text, " ").into_owned()
}

/// Splits the first line of an item into the sub-claim text and whatever
/// annotation follows it on the same line.
fn split_head<'a>(table: &KeywordTable, head: &'a str) -> (String, &'a str) {
    let trimmed = head.trim_start_matches(|c: char| c == '*' || c.is_whitespace());
    // A leading quotation is the sub-claim itself.
    if let Some(((start, end), inner)) = quotes(trimmed).into_iter().next() {
        if trimmed[..start].trim().is_empty() {
            return (inner, &trimmed[end..]);
        }
    }
    let mut cut = trimmed.len();
    for cue in [Cue::Evidence, Cue::LabelKey] {
        if let Some((s, _)) = table.find(cue, trimmed) {
            cut = cut.min(s);
        }
    }
    for m in LABEL_SEPARATOR.find_iter(trimmed) {
        if m.start() >= cut {
            break;
        }
        let rest = &trimmed[m.end()..];
        let starts_with_label = table
            .classify(first_words(rest, 4))
            .is_some();
        if starts_with_label && m.start() > 0 {
            cut = m.start();
            break;
        }
    }
    (strip_decoration(&trimmed[..cut]), &trimmed[cut..])
}

fn first_words(text: &str, n: usize) -> &str {
    let mut end = text.len();
    let mut count = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                count += 1;
                if count == n {
                    end = i;
                    break;
                }
            }
            in_word = false;
        } else {
            in_word = true;
        }
    }
    &text[..end]
}

fn is_no_evidence(table: &KeywordTable, text: &str) -> bool {
    let t = text.trim();
    t.is_empty() || t == "-" || table.matches(Cue::NoEvidence, t)
}

/// Evidence quoted after an evidence key, or else the first quotation in
/// the annotation text.
fn find_evidence(table: &KeywordTable, segments: &[&str]) -> Option<String> {
    for seg in segments {
        if let Some((_, end)) = table.find(Cue::Evidence, seg) {
            let after = &seg[end..];
            if let Some((_, q)) = quotes(after).into_iter().next() {
                return Some(q);
            }
            let value = strip_decoration(first_sentence(after));
            if !is_no_evidence(table, &value) {
                return Some(value);
            }
            return None;
        }
    }
    segments
        .iter()
        .flat_map(|seg| quotes(seg))
        .map(|(_, q)| q)
        .next()
}

fn first_sentence(text: &str) -> &str {
    text.lines().next().unwrap_or("")
}

fn find_label(table: &KeywordTable, segments: &[&str]) -> Option<EntailmentLabel> {
    // an explicit "Label: ..." key wins; the last one if repeated
    let explicit = segments.iter().rev().find_map(|seg| {
        let (_, end) = table.find(Cue::LabelKey, seg)?;
        table.classify(&without_quotes(first_sentence(&seg[end..])))
    });
    explicit.or_else(|| {
        let joined = segments
            .iter()
            .map(|s| without_quotes(s))
            .collect::<Vec<_>>()
            .join("\n");
        table.classify(&joined)
    })
}

/// A head that is nothing but a label ("Entailed.", "Not supported"), as in
/// an evaluation list that follows a separate decomposition list.
fn bare_label(table: &KeywordTable, text: &str) -> Option<EntailmentLabel> {
    if text.split_whitespace().count() > 3 {
        return None;
    }
    table.classify(text)
}

pub(crate) fn parse_item(table: &KeywordTable, head: &str, continuation: &[String]) -> ParsedItem {
    let (text, rest) = split_head(table, head);
    let mut segments: Vec<&str> = vec![rest];
    segments.extend(continuation.iter().map(String::as_str));
    let bare = bare_label(table, &text);
    ParsedItem {
        text: if bare.is_some() { String::new() } else { text },
        evidence: find_evidence(table, &segments),
        label: find_label(table, &segments).or(bare),
    }
}
