//! Reasoning-quality metrics over (trace, annotation) pairs, plus
//! detection accuracy.
//!
//! Per-trace scores are exact rationals. Rounding happens only when a
//! value is rendered.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{aggregate, collapse, BinaryVerdict, EntailmentLabel};
use crate::types::{AnnotationRecord, ParseStatus, ReasoningTrace};

/// Exact score in [0, 1] (or an exact mean of such scores).
pub type Score = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("trace failed to parse")]
    FailedTrace,
    #[error("trace has no final verdict")]
    MissingVerdict,
    #[error("trace has no sub-claims")]
    NoSubClaims,
    #[error("{field}: expected {expected} entries, got {actual}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{0} must not be empty")]
    Empty(&'static str),
}

/// Whether sub-claim labels are compared 3-way or after collapsing to binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntailmentMode {
    #[default]
    ThreeWay,
    Binary,
}

/// Number of sub-claims the annotation lists must cover. A trace without
/// a decomposition counts as one sub-claim: the whole claim.
pub fn expected_sub_claims(trace: &ReasoningTrace) -> usize {
    trace.sub_claims.len().max(1)
}

/// Predicted sub-claim labels. Without a decomposition, the whole claim is
/// the single sub-claim and its label follows the stated verdict
/// (not-supported is read as neutral).
pub fn predicted_labels(trace: &ReasoningTrace) -> Option<Vec<EntailmentLabel>> {
    if !trace.sub_claims.is_empty() {
        return Some(trace.labels());
    }
    trace.final_verdict.map(|v| {
        vec![match v {
            BinaryVerdict::Supported => EntailmentLabel::Entailed,
            BinaryVerdict::NotSupported => EntailmentLabel::Neutral,
        }]
    })
}

/// Number of sub-claims, at least one.
pub fn atomicity(trace: &ReasoningTrace) -> Result<usize, MetricError> {
    if trace.parse_status() == ParseStatus::Failed {
        return Err(MetricError::FailedTrace);
    }
    Ok(trace.sub_claims.len().max(1))
}

fn mean_flags(flags: &[bool], field: &'static str) -> Result<Score, MetricError> {
    if flags.is_empty() {
        return Err(MetricError::Empty(field));
    }
    let hits = flags.iter().filter(|f| **f).count() as i64;
    Ok(Ratio::new(hits, flags.len() as i64))
}

fn check_len(field: &'static str, expected: usize, actual: usize) -> Result<(), MetricError> {
    if expected != actual {
        return Err(MetricError::LengthMismatch {
            field,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Fraction of sub-claims judged sound (entailed by the original claim).
pub fn soundness(annotation: &AnnotationRecord, trace: &ReasoningTrace) -> Result<Score, MetricError> {
    check_len("sound_flags", expected_sub_claims(trace), annotation.sound_flags.len())?;
    mean_flags(&annotation.sound_flags, "sound_flags")
}

/// 1 if the sub-claims cover all of the claim, else 0.
pub fn completeness(annotation: &AnnotationRecord) -> Score {
    Ratio::from_integer(i64::from(annotation.complete))
}

/// Fraction of sub-claims with correct evidence. A sub-claim with no
/// evidence in the source and no claimed attribution is flagged correct
/// by the annotator and so earns full credit.
pub fn attribution_score(annotation: &AnnotationRecord, trace: &ReasoningTrace) -> Result<Score, MetricError> {
    check_len(
        "attribution_flags",
        expected_sub_claims(trace),
        annotation.attribution_flags.len(),
    )?;
    mean_flags(&annotation.attribution_flags, "attribution_flags")
}

/// Fraction of sub-claims whose predicted label matches the gold label.
pub fn entailment_score(
    trace: &ReasoningTrace,
    annotation: &AnnotationRecord,
    mode: EntailmentMode,
) -> Result<Score, MetricError> {
    let predicted = predicted_labels(trace).ok_or(MetricError::MissingVerdict)?;
    check_len("gold_sub_labels", predicted.len(), annotation.gold_sub_labels.len())?;
    label_agreement(&predicted, &annotation.gold_sub_labels, mode)
}

/// Mean of `[predicted_i == gold_i]` under `mode`.
pub fn label_agreement(
    predicted: &[EntailmentLabel],
    gold: &[EntailmentLabel],
    mode: EntailmentMode,
) -> Result<Score, MetricError> {
    check_len("gold_sub_labels", predicted.len(), gold.len())?;
    if predicted.is_empty() {
        return Err(MetricError::Empty("gold_sub_labels"));
    }
    let hits = predicted
        .iter()
        .zip(gold)
        .filter(|(p, g)| match mode {
            EntailmentMode::ThreeWay => p == g,
            EntailmentMode::Binary => collapse(**p) == collapse(**g),
        })
        .count() as i64;
    Ok(Ratio::new(hits, predicted.len() as i64))
}

/// 1 if the stated verdict equals the aggregation of the sub-claim labels.
pub fn aggregation_score(trace: &ReasoningTrace) -> Result<Score, MetricError> {
    let stated = trace.final_verdict.ok_or(MetricError::MissingVerdict)?;
    let implied = aggregate(&trace.labels()).map_err(|_| MetricError::NoSubClaims)?;
    Ok(Ratio::from_integer(i64::from(stated == implied)))
}

/// A percentage held exactly, e.g. `74.40` is stored as 7440/100.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Percent(Ratio<i64>);

impl Percent {
    pub fn new(value: Ratio<i64>) -> Self {
        Percent(value)
    }

    pub fn zero() -> Self {
        Percent(Ratio::from_integer(0))
    }

    /// `100 * numerator / denominator`.
    pub fn from_fraction(numerator: i64, denominator: i64) -> Self {
        Percent(Ratio::new(100 * numerator, denominator))
    }

    pub fn value(self) -> Ratio<i64> {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Value in hundredths, rounded half to even.
    pub fn hundredths(self) -> i64 {
        round_half_even(self.0 * Ratio::from_integer(100))
    }

    /// Two-decimal rendering with round-half-to-even.
    pub fn fmt2(self) -> String {
        format_hundredths(self.hundredths())
    }

    /// Signed two-decimal rendering, `+3.40` / `-0.80` / `0.00`.
    pub fn fmt_signed(self) -> String {
        let h = self.hundredths();
        if h > 0 {
            format!("+{}", format_hundredths(h))
        } else {
            format_hundredths(h)
        }
    }

    pub fn mean(values: &[Percent]) -> Option<Percent> {
        if values.is_empty() {
            return None;
        }
        let sum: Ratio<i64> = values.iter().map(|p| p.0).sum();
        Some(Percent(sum / Ratio::from_integer(values.len() as i64)))
    }
}

impl std::ops::Sub for Percent {
    type Output = Percent;
    fn sub(self, rhs: Percent) -> Percent {
        Percent(self.0 - rhs.0)
    }
}

impl std::ops::Neg for Percent {
    type Output = Percent;
    fn neg(self) -> Percent {
        Percent(-self.0)
    }
}

/// Rounds to the nearest integer, ties to even.
pub fn round_half_even(x: Ratio<i64>) -> i64 {
    let floor = x.floor();
    let frac = x - floor;
    let half = Ratio::new(1, 2);
    let base = floor.to_integer();
    if frac > half || (frac == half && base % 2 != 0) {
        base + 1
    } else {
        base
    }
}

fn format_hundredths(h: i64) -> String {
    let sign = if h < 0 { "-" } else { "" };
    let a = h.unsigned_abs();
    format!("{sign}{}.{:02}", a / 100, a % 100)
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fmt2())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid percentage `{0}`")]
pub struct PercentParseError(pub String);

impl FromStr for Percent {
    type Err = PercentParseError;

    /// Parses a plain decimal such as `74.40`, `-7.2` or `100`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PercentParseError(s.to_string());
        let t = s.trim();
        let (negative, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) || frac_part.len() > 9 {
            return Err(err());
        }
        let int: i64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| err())? };
        let scale = 10i64.pow(frac_part.len() as u32);
        let frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| err())? };
        let value = Ratio::new(int * scale + frac, scale);
        Ok(Percent(if negative { -value } else { value }))
    }
}

impl Serialize for Percent {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format!("{}/{}", self.0.numer(), self.0.denom()))
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().map_err(serde::de::Error::custom)?;
            let d: i64 = d.trim().parse().map_err(serde::de::Error::custom)?;
            if d == 0 {
                return Err(serde::de::Error::custom("zero denominator"));
            }
            Ok(Percent(Ratio::new(n, d)))
        } else {
            s.parse().map_err(serde::de::Error::custom)
        }
    }
}

/// Detection accuracy as a percentage.
pub fn accuracy(predictions: &[BinaryVerdict], golds: &[BinaryVerdict]) -> Result<Percent, MetricError> {
    check_len("predictions", golds.len(), predictions.len())?;
    if golds.is_empty() {
        return Err(MetricError::Empty("predictions"));
    }
    let correct = predictions.iter().zip(golds).filter(|(p, g)| p == g).count() as i64;
    Ok(Percent::from_fraction(correct, golds.len() as i64))
}

/// Accuracy when some predictions are missing; a missing prediction counts
/// as incorrect.
pub fn accuracy_with_failures(
    predictions: &[Option<BinaryVerdict>],
    golds: &[BinaryVerdict],
) -> Result<Percent, MetricError> {
    check_len("predictions", golds.len(), predictions.len())?;
    if golds.is_empty() {
        return Err(MetricError::Empty("predictions"));
    }
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| **p == Some(**g))
        .count() as i64;
    Ok(Percent::from_fraction(correct, golds.len() as i64))
}

/// Every metric that applies to one annotated trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceScores {
    pub atomicity: Option<i64>,
    pub soundness: Option<Score>,
    pub completeness: Option<Score>,
    pub attribution: Option<Score>,
    pub entailment: Option<Score>,
    pub aggregation: Option<Score>,
}

impl TraceScores {
    /// Scores one trace. Atomicity needs a parsed trace; aggregation needs a
    /// full decomposition; the annotation-based metrics need the lists to
    /// cover the trace's sub-claims.
    pub fn score(
        trace: &ReasoningTrace,
        annotation: &AnnotationRecord,
        mode: EntailmentMode,
    ) -> Result<Self, MetricError> {
        Ok(Self {
            atomicity: atomicity(trace).ok().map(|a| a as i64),
            soundness: Some(soundness(annotation, trace)?),
            completeness: Some(completeness(annotation)),
            attribution: Some(attribution_score(annotation, trace)?),
            entailment: entailment_score(trace, annotation, mode).ok(),
            aggregation: if trace.parse_status() == ParseStatus::Full {
                aggregation_score(trace).ok()
            } else {
                None
            },
        })
    }
}

/// Mean of one metric and how many traces contributed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricMean {
    pub count: usize,
    pub mean: Option<Score>,
}

impl MetricMean {
    fn of(values: impl Iterator<Item = Score>) -> Self {
        let (count, sum) = values.fold((0usize, Score::from_integer(0)), |(n, s), v| (n + 1, s + v));
        MetricMean {
            count,
            mean: (count > 0).then(|| sum / Score::from_integer(count as i64)),
        }
    }

    /// Two-decimal rendering, `--` when empty.
    pub fn fmt2(&self) -> String {
        self.mean.map_or_else(
            || "--".to_string(),
            |m| format_hundredths(round_half_even(m * Score::from_integer(100))),
        )
    }
}

/// Dataset-level means of the six metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub traces: usize,
    pub atomicity: MetricMean,
    pub soundness: MetricMean,
    pub completeness: MetricMean,
    pub attribution: MetricMean,
    pub entailment: MetricMean,
    pub aggregation: MetricMean,
}

impl MetricMeans {
    /// Macro average: each trace's scores are computed first, then each
    /// metric is averaged over the traces it applies to. Order-independent.
    pub fn from_scores(scores: &[TraceScores]) -> Self {
        let int = |v: i64| Score::from_integer(v);
        MetricMeans {
            traces: scores.len(),
            atomicity: MetricMean::of(scores.iter().filter_map(|s| s.atomicity.map(int))),
            soundness: MetricMean::of(scores.iter().filter_map(|s| s.soundness)),
            completeness: MetricMean::of(scores.iter().filter_map(|s| s.completeness)),
            attribution: MetricMean::of(scores.iter().filter_map(|s| s.attribution)),
            entailment: MetricMean::of(scores.iter().filter_map(|s| s.entailment)),
            aggregation: MetricMean::of(scores.iter().filter_map(|s| s.aggregation)),
        }
    }
}
