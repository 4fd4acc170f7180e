//! Turning raw model responses into [`ReasoningTrace`]s.
//!
//! Extraction is deterministic pattern matching over line structure and
//! the cue phrases in [`KeywordTable`]. It never fails: text that yields
//! no structure becomes a trace with `parse_status = failed` and the raw
//! response preserved.
//!
//! Recognised guided-reasoning layout (other layouts degrade gracefully):
//!
//! ```text
//! Step 2: Decompose the claim into atomic facts.
//! 1. Charity can be wrong when done with the wrong intentions.
//! 2. Charity can be wrong when it perpetuates dependency.
//!
//! Step 3: Evaluate each atomic fact.
//! 1. Charity can be wrong when done with the wrong intentions.
//!    Evidence: none found.
//!    Label: neutral
//! 2. Charity can be wrong when it perpetuates dependency.
//!    Evidence: "charity can foster dependency"
//!    Label: entailed
//!
//! One component is neutral, so the claim is not supported.
//! no
//! ```

mod items;
pub mod keywords;
mod lists;
mod qa;

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

pub use keywords::{Cue, KeywordError, KeywordTable};

use crate::label::{BinaryVerdict, EntailmentLabel};
use crate::prompt::MethodId;
use crate::types::{Attribution, ReasoningTrace, SubClaimRecord};
use items::{parse_item, ParsedItem};
use lists::{classify_lines, find_lists, ItemList, Line};

static VERDICT_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap());

/// Final verdict stated in a response: the last standalone "yes" or "no"
/// (case-insensitive, word-bounded) wins.
pub fn extract_verdict(response: &str) -> Option<BinaryVerdict> {
    VERDICT_TOKEN.find_iter(response).last().map(|m| {
        if m.as_str().eq_ignore_ascii_case("yes") {
            BinaryVerdict::Supported
        } else {
            BinaryVerdict::NotSupported
        }
    })
}

/// Trace extractor configured with a keyword table.
#[derive(Debug, Clone, Default)]
pub struct TraceParser {
    table: KeywordTable,
}

impl TraceParser {
    pub fn new(table: KeywordTable) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &KeywordTable {
        &self.table
    }

    /// Best-effort structured extraction. QA-based responses are routed
    /// through [`adapt_qa_trace`](Self::adapt_qa_trace).
    ///
    /// Sub-claims are mined from both the response and the thinking text;
    /// the response takes precedence, and thinking only fills in evidence
    /// or labels the response left out for the same numbered sub-claim.
    pub fn extract_trace(&self, response: &str, thinking: Option<&str>, method: MethodId) -> ReasoningTrace {
        if method == MethodId::QaBased {
            let mut trace = self.adapt_qa_trace(response);
            if trace.sub_claims.is_empty() {
                if let Some(t) = thinking {
                    trace.sub_claims = self.adapt_qa_trace(t).sub_claims;
                }
            }
            trace.reasoning_text = thinking.map(str::to_string);
            return trace;
        }

        let from_response = self.mine_sub_claims(response);
        let from_thinking = thinking.map(|t| self.mine_sub_claims(t)).unwrap_or_default();
        let merged = merge_items(from_response, from_thinking);
        let binary = method.is_binary_labelled();
        let sub_claims = merged
            .into_iter()
            .filter(|item| !item.text.is_empty())
            .map(|item| to_record(item, binary))
            .collect();

        ReasoningTrace::new(
            sub_claims,
            extract_verdict(response),
            response,
            thinking.map(str::to_string),
            method,
        )
    }

    /// Maps a question-answering trace onto sub-claims: each question is a
    /// sub-claim, the source-derived answer is its attribution, and the
    /// answer comparison gives the label.
    pub fn adapt_qa_trace(&self, response: &str) -> ReasoningTrace {
        let sub_claims = qa::adapt(&self.table, response);
        ReasoningTrace::new(
            sub_claims,
            extract_verdict(response),
            response,
            None,
            MethodId::QaBased,
        )
    }

    fn mine_sub_claims(&self, text: &str) -> Vec<ParsedItem> {
        let lines: Vec<Line<'_>> = classify_lines(text);
        let Some(first_cue) = lines
            .iter()
            .position(|l| self.table.matches(Cue::Decomposition, l.text))
        else {
            return Vec::new();
        };
        let candidates: Vec<ItemList> = find_lists(&lines)
            .into_iter()
            .filter(|list| list.start_line >= first_cue)
            .collect();
        let parsed: Vec<Vec<ParsedItem>> = candidates
            .iter()
            .map(|list| {
                list.items
                    .iter()
                    .map(|item| parse_item(&self.table, &item.head, &item.continuation))
                    .collect()
            })
            .collect();
        select_group(parsed)
    }
}

/// Lists of the same length describe the same sub-claims (a decomposition
/// list followed by an evaluation list). The group with the most labelled
/// items wins; the earliest list in it supplies the sub-claim texts.
fn select_group(lists: Vec<Vec<ParsedItem>>) -> Vec<ParsedItem> {
    let mut groups: BTreeMap<usize, (usize, usize, Vec<Vec<ParsedItem>>)> = BTreeMap::new();
    for (order, list) in lists.into_iter().enumerate() {
        let labelled = list.iter().filter(|i| i.label.is_some()).count();
        let entry = groups.entry(list.len()).or_insert((0, order, Vec::new()));
        entry.0 += labelled;
        entry.2.push(list);
    }
    let Some((_, _, members)) = groups
        .into_values()
        .max_by_key(|(labelled, first, _)| (*labelled, std::cmp::Reverse(*first)))
    else {
        return Vec::new();
    };
    let mut members = members.into_iter();
    let mut base = members.next().unwrap_or_default();
    for later in members {
        for (slot, item) in base.iter_mut().zip(later) {
            if slot.text.is_empty() {
                slot.text = item.text;
            }
            if item.evidence.is_some() {
                slot.evidence = item.evidence;
            }
            if item.label.is_some() {
                slot.label = item.label;
            }
        }
    }
    base
}

fn merge_items(primary: Vec<ParsedItem>, secondary: Vec<ParsedItem>) -> Vec<ParsedItem> {
    if primary.is_empty() {
        return secondary;
    }
    if primary.len() != secondary.len() {
        return primary;
    }
    primary
        .into_iter()
        .zip(secondary)
        .map(|(mut p, s)| {
            if p.evidence.is_none() {
                p.evidence = s.evidence;
            }
            if p.label.is_none() {
                p.label = s.label;
            }
            p
        })
        .collect()
}

fn to_record(item: ParsedItem, binary: bool) -> SubClaimRecord {
    // unlabelled sub-claims default to neutral (no evidence either way);
    // binary-labelled methods only ever say supported / not supported.
    let label = match item.label.unwrap_or(EntailmentLabel::Neutral) {
        EntailmentLabel::Contradicted if binary => EntailmentLabel::Neutral,
        other => other,
    };
    SubClaimRecord {
        text: item.text,
        attribution: item.evidence.map(Attribution::new),
        label,
    }
}

/// Convenience wrapper using the builtin keyword table.
pub fn extract_trace(response: &str, thinking: Option<&str>, method: MethodId) -> ReasoningTrace {
    TraceParser::default().extract_trace(response, thinking, method)
}

/// Convenience wrapper using the builtin keyword table.
pub fn adapt_qa_trace(response: &str) -> ReasoningTrace {
    TraceParser::default().adapt_qa_trace(response)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ParseStatus;
    use proptest::prelude::*;
    use EntailmentLabel::*;

    #[test]
    fn verdict_examples() {
        assert_eq!(extract_verdict("…all facts check out. yes"), Some(BinaryVerdict::Supported));
        assert_eq!(extract_verdict("No."), Some(BinaryVerdict::NotSupported));
        assert_eq!(
            extract_verdict("Is it supported? yes for fact 1, but overall: no"),
            Some(BinaryVerdict::NotSupported)
        );
        assert_eq!(extract_verdict("nothing here; nobody knows"), None);
        assert_eq!(extract_verdict("**YES**"), Some(BinaryVerdict::Supported));
    }

    const FIG1: &str = "Step 2: Decompose the claim into atomic facts.\n\
1. Charity can be wrong when it is done with the wrong intentions.\n\
2. Charity can be wrong when it perpetuates dependency.\n\
\n\
Step 3: Evaluate each atomic fact.\n\
1. Charity can be wrong when it is done with the wrong intentions.\n   Evidence: none found.\n   Label: neutral\n\
2. Charity can be wrong when it perpetuates dependency.\n   Evidence: \"charity can foster dependency\"\n   Label: entailed\n\
\n\
One component is neutral, so the claim is not supported.\n\
no";

    #[test]
    fn two_sub_claim_trace() {
        let trace = extract_trace(FIG1, None, MethodId::Clatter);
        assert_eq!(trace.parse_status(), ParseStatus::Full);
        assert_eq!(trace.labels(), vec![Neutral, Entailed]);
        assert_eq!(trace.final_verdict, Some(BinaryVerdict::NotSupported));
        assert_eq!(
            trace.sub_claims[1].attribution.as_ref().map(|a| a.text.as_str()),
            Some("charity can foster dependency")
        );
        assert!(trace.sub_claims[0].attribution.is_none());
        assert_eq!(trace.raw_response, FIG1);
    }

    #[test]
    fn bare_yes_and_empty() {
        let t = extract_trace("yes", None, MethodId::Clatter);
        assert_eq!(t.parse_status(), ParseStatus::VerdictOnly);
        assert!(t.sub_claims.is_empty());
        assert_eq!(extract_trace("", None, MethodId::Clatter).parse_status(), ParseStatus::Failed);
    }

    #[test]
    fn lists_before_any_cue_are_ignored() {
        let t = extract_trace("Reasons:\n1. It is long.\n2. It is blue.\n\nyes", None, MethodId::Baseline);
        assert_eq!(t.parse_status(), ParseStatus::VerdictOnly);
    }

    #[test]
    fn thinking_fills_gaps_and_response_wins() {
        let thinking = "Let me break it down into atomic facts:\n1. A is red — entailed, \"A is red\"\n2. B is big — contradicted, \"B is tiny\"";
        let response = "Atomic facts:\n1. A is red.\n2. B is big.\n   Label: neutral\n\nno";
        let t = extract_trace(response, Some(thinking), MethodId::Clatter);
        assert_eq!(t.sub_claims[0].text, "A is red.");
        assert_eq!(t.labels(), vec![Entailed, Neutral]);
        assert_eq!(t.sub_claims[0].attribution.as_ref().unwrap().text, "A is red");
        assert_eq!(t.reasoning_text.as_deref(), Some(thinking));
    }

    #[test]
    fn thinking_only_decomposition() {
        let thinking = "The sub-claims are:\n- X holds (supported)\n- Y holds (neutral)";
        let t = extract_trace("Final answer: no", Some(thinking), MethodId::Clatter);
        assert_eq!(t.parse_status(), ParseStatus::Full);
        assert_eq!(t.labels(), vec![Entailed, Neutral]);
    }

    #[test]
    fn binary_methods_never_contradict() {
        let r = "Atomic components:\n1. A — contradicted\n\nno";
        assert_eq!(extract_trace(r, None, MethodId::AblateDecomp).labels(), vec![Neutral]);
        assert_eq!(extract_trace(r, None, MethodId::Ablate3Way).labels(), vec![Contradicted]);
    }

    proptest! {
        #[test]
        fn totality(s in "\\PC{0,400}", method in 0usize..7) {
            let m = MethodId::ALL[method];
            let t = extract_trace(&s, Some(&s), m);
            prop_assert_eq!(&t.raw_response, &s);
            let status = t.parse_status();
            prop_assert_eq!(status == ParseStatus::Full, !t.sub_claims.is_empty() && t.final_verdict.is_some());
            prop_assert_eq!(status == ParseStatus::VerdictOnly, t.sub_claims.is_empty() && t.final_verdict.is_some());
        }

        #[test]
        fn structured_totality(lines in prop::collection::vec(
            prop_oneof![
                Just("Atomic facts:".to_string()),
                Just("".to_string()),
                "[0-9]{1,2}\\. [a-z \"]{0,20}",
                "- [a-z:\"—()]{0,20}",
                "  Label: [a-z ]{0,12}",
                "[a-zA-Z ]{0,30}",
            ], 0..30)) {
            let text = lines.join("\n");
            let t = extract_trace(&text, None, MethodId::Clatter);
            prop_assert!(t.sub_claims.iter().all(|s| !s.text.is_empty()));
            let _ = adapt_qa_trace(&text);
        }

        #[test]
        fn verdict_stable_under_case_and_whitespace(word in prop_oneof![Just("yes"), Just("no")], pad in "[ \t\n]{0,5}") {
            let base = format!("The facts check out. {word}");
            let expected = extract_verdict(&base);
            prop_assert_eq!(extract_verdict(&format!("{pad}{base}{pad}")), expected);
            prop_assert_eq!(extract_verdict(&base.to_uppercase()), expected);
        }
    }
}
