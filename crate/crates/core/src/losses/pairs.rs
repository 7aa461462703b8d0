use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LossError;

/// Which view-index pairs `(a, b)` enter the intra-image term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSetVariant {
    /// All `(a, b)` with `a != b`; `M(M-1)` pairs.
    #[default]
    OrderedDistinct,
    /// `a < b`; `M(M-1)/2` pairs.
    UnorderedDistinct,
    /// Every `(a, b)` including `a == b`; `M²` pairs.
    AllPairs,
}

impl PairSetVariant {
    pub const ALL: [PairSetVariant; 3] = [
        PairSetVariant::OrderedDistinct,
        PairSetVariant::UnorderedDistinct,
        PairSetVariant::AllPairs,
    ];
}

impl fmt::Display for PairSetVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairSetVariant::OrderedDistinct => "ordered_distinct",
            PairSetVariant::UnorderedDistinct => "unordered_distinct",
            PairSetVariant::AllPairs => "all_pairs",
        })
    }
}

impl FromStr for PairSetVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ordered_distinct" | "ordered" => Ok(PairSetVariant::OrderedDistinct),
            "unordered_distinct" | "unordered" => Ok(PairSetVariant::UnorderedDistinct),
            "all_pairs" | "all" => Ok(PairSetVariant::AllPairs),
            other => Err(format!("unknown pair-set variant `{other}`")),
        }
    }
}

/// Zero-based view index pairs for `m` views, sorted lexicographically.
pub fn pair_set(m: usize, variant: PairSetVariant) -> Result<Vec<(usize, usize)>, LossError> {
    let min_views = match variant {
        PairSetVariant::AllPairs => 1,
        _ => 2,
    };
    if m < min_views {
        return Err(LossError::EmptyPairSet { variant, views: m });
    }
    let keep = |a: usize, b: usize| match variant {
        PairSetVariant::OrderedDistinct => a != b,
        PairSetVariant::UnorderedDistinct => a < b,
        PairSetVariant::AllPairs => true,
    };
    Ok((0..m)
        .flat_map(|a| (0..m).map(move |b| (a, b)))
        .filter(|&(a, b)| keep(a, b))
        .collect())
}
