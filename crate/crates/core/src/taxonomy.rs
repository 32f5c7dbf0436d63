//! Seven annotation cases, three NLI labels, two verdicts.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relation between the two segments of a pair, as judged by an annotator.
///
/// 1 same meaning, 2 conflicting, 3 unrelated, 4 related with the first
/// preceding the second, 5 the reverse, 6 the first carries more detail,
/// 7 the second carries more detail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct CaseLabel(u8);

impl CaseLabel {
    pub const ALL: [CaseLabel; 7] = [
        CaseLabel(1),
        CaseLabel(2),
        CaseLabel(3),
        CaseLabel(4),
        CaseLabel(5),
        CaseLabel(6),
        CaseLabel(7),
    ];

    pub fn new(case: u8) -> Result<Self> {
        if (1..=7).contains(&case) {
            Ok(Self(case))
        } else {
            Err(Error::InvalidCase(case))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn nli(self) -> NliLabel {
        map_case_to_nli(self)
    }
}

impl TryFrom<u8> for CaseLabel {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Self::new(value)
    }
}

impl From<CaseLabel> for u8 {
    fn from(value: CaseLabel) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLabel {
    Entailment,
    Contradiction,
    Neutral,
}

impl NliLabel {
    /// Fixed class order used by every probability vector in the crate.
    pub const ALL: [NliLabel; 3] = [
        NliLabel::Entailment,
        NliLabel::Contradiction,
        NliLabel::Neutral,
    ];

    pub fn index(self) -> usize {
        match self {
            NliLabel::Entailment => 0,
            NliLabel::Contradiction => 1,
            NliLabel::Neutral => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Contradiction => "contradiction",
            NliLabel::Neutral => "neutral",
        }
    }

    pub fn verdict(self) -> ConsistencyVerdict {
        map_nli_to_consistency(self)
    }
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NliLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "entailment" => Ok(NliLabel::Entailment),
            "contradiction" => Ok(NliLabel::Contradiction),
            "neutral" => Ok(NliLabel::Neutral),
            other => Err(format!("unknown NLI label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyVerdict {
    Consistent,
    Inconsistent,
}

impl ConsistencyVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsistencyVerdict::Consistent => "consistent",
            ConsistencyVerdict::Inconsistent => "inconsistent",
        }
    }
}

impl FromStr for ConsistencyVerdict {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "consistent" => Ok(ConsistencyVerdict::Consistent),
            "inconsistent" => Ok(ConsistencyVerdict::Inconsistent),
            other => Err(format!("unknown verdict `{other}`")),
        }
    }
}

pub fn map_case_to_nli(case: CaseLabel) -> NliLabel {
    match case.0 {
        1 | 4 | 5 => NliLabel::Entailment,
        2 | 6 | 7 => NliLabel::Contradiction,
        _ => NliLabel::Neutral,
    }
}

pub fn map_nli_to_consistency(label: NliLabel) -> ConsistencyVerdict {
    match label {
        NliLabel::Contradiction => ConsistencyVerdict::Inconsistent,
        NliLabel::Entailment | NliLabel::Neutral => ConsistencyVerdict::Consistent,
    }
}

/// One annotator judgment, as appended to `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub pair_id: String,
    pub case: CaseLabel,
    pub nli: NliLabel,
    pub annotator: String,
    pub phase: u32,
    pub timestamp: DateTime<Utc>,
    pub replaced_prediction: Option<NliLabel>,
    /// Set when this submission replaced an earlier one for the same pair and phase.
    #[serde(default)]
    pub superseded: bool,
}

/// Records a judgment on a pair sampled in `phase`, through the project's
/// single writer.
pub fn record_annotation(
    project: &mut crate::store::Project,
    pair_id: &str,
    case: CaseLabel,
    annotator: &str,
    phase: u32,
) -> Result<Annotation> {
    project.record_annotation(pair_id, case, annotator, phase)
}
