//! The label algebra: 3-way entailment labels, binary verdicts and the
//! aggregation rule that maps sub-claim labels to a claim-level verdict.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entailment status of one sub-claim relative to the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntailmentLabel {
    Entailed,
    Contradicted,
    Neutral,
}

/// Claim-level prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryVerdict {
    Supported,
    NotSupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("empty decomposition")]
    EmptyDecomposition,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label `{0}`")]
pub struct UnknownLabel(pub String);

impl EntailmentLabel {
    pub const ALL: [EntailmentLabel; 3] = [
        EntailmentLabel::Entailed,
        EntailmentLabel::Contradicted,
        EntailmentLabel::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntailmentLabel::Entailed => "entailed",
            EntailmentLabel::Contradicted => "contradicted",
            EntailmentLabel::Neutral => "neutral",
        }
    }

    /// Binary view of the label: neutral and contradicted share the
    /// not-supported class.
    pub fn collapse(self) -> BinaryVerdict {
        collapse(self)
    }
}

impl BinaryVerdict {
    pub const ALL: [BinaryVerdict; 2] = [BinaryVerdict::Supported, BinaryVerdict::NotSupported];

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryVerdict::Supported => "supported",
            BinaryVerdict::NotSupported => "not_supported",
        }
    }
}

impl fmt::Display for EntailmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for BinaryVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntailmentLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailed" | "entailment" => Ok(EntailmentLabel::Entailed),
            "contradicted" | "contradiction" => Ok(EntailmentLabel::Contradicted),
            "neutral" => Ok(EntailmentLabel::Neutral),
            _ => Err(UnknownLabel(s.to_string())),
        }
    }
}

impl FromStr for BinaryVerdict {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "supported" => Ok(BinaryVerdict::Supported),
            "not_supported" | "not supported" | "unsupported" => Ok(BinaryVerdict::NotSupported),
            _ => Err(UnknownLabel(s.to_string())),
        }
    }
}

/// Maps a 3-way label onto the binary verdict space.
pub fn collapse(label: EntailmentLabel) -> BinaryVerdict {
    match label {
        EntailmentLabel::Entailed => BinaryVerdict::Supported,
        EntailmentLabel::Contradicted | EntailmentLabel::Neutral => BinaryVerdict::NotSupported,
    }
}

/// A claim is supported iff every one of its sub-claims is entailed.
pub fn aggregate(labels: &[EntailmentLabel]) -> Result<BinaryVerdict, AggregateError> {
    if labels.is_empty() {
        return Err(AggregateError::EmptyDecomposition);
    }
    if labels.iter().all(|l| *l == EntailmentLabel::Entailed) {
        Ok(BinaryVerdict::Supported)
    } else {
        Ok(BinaryVerdict::NotSupported)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EntailmentLabel::*;

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[Entailed, Entailed, Entailed]), Ok(BinaryVerdict::Supported));
        assert_eq!(aggregate(&[Entailed, Neutral]), Ok(BinaryVerdict::NotSupported));
        assert_eq!(aggregate(&[Contradicted]), Ok(BinaryVerdict::NotSupported));
        assert_eq!(aggregate(&[]), Err(AggregateError::EmptyDecomposition));
        assert_eq!(AggregateError::EmptyDecomposition.to_string(), "empty decomposition");
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse(Entailed), BinaryVerdict::Supported);
        assert_eq!(collapse(Neutral), BinaryVerdict::NotSupported);
        assert_eq!(collapse(Contradicted), BinaryVerdict::NotSupported);
    }

    #[test]
    fn parse_round_trip() {
        for l in EntailmentLabel::ALL {
            assert_eq!(l.as_str().parse::<EntailmentLabel>().unwrap(), l);
        }
        for v in BinaryVerdict::ALL {
            assert_eq!(v.as_str().parse::<BinaryVerdict>().unwrap(), v);
        }
        assert!("maybe".parse::<EntailmentLabel>().is_err());
    }

    fn label() -> impl Strategy<Value = EntailmentLabel> {
        prop_oneof![Just(Entailed), Just(Contradicted), Just(Neutral)]
    }

    proptest! {
        #[test]
        fn permutation_invariant(labels in prop::collection::vec(label(), 1..12), seed in any::<u64>()) {
            let mut shuffled = labels.clone();
            // rotate + reverse covers a generator set of the symmetric group
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            if seed % 2 == 0 {
                shuffled.reverse();
            }
            prop_assert_eq!(aggregate(&labels), aggregate(&shuffled));
        }

        #[test]
        fn monotone(labels in prop::collection::vec(label(), 1..12), idx in any::<usize>(), replacement in prop_oneof![Just(Neutral), Just(Contradicted)]) {
            let before = aggregate(&labels).unwrap();
            let mut after = labels.clone();
            let i = idx % after.len();
            if after[i] == Entailed {
                after[i] = replacement;
            }
            let after = aggregate(&after).unwrap();
            prop_assert!(!(before == BinaryVerdict::NotSupported && after == BinaryVerdict::Supported));
        }
    }
}
