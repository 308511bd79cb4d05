//! Key point to comment match judgments, vote aggregation and match P/R/F1.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Annotator answer to "does this comment match this key point?".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatchLabel {
    #[serde(alias = "Not At All", alias = "not_at_all")]
    NotAtAll,
    #[serde(alias = "Somewhat Not Well", alias = "somewhat_not_well")]
    SomewhatNotWell,
    #[serde(alias = "Somewhat Well", alias = "somewhat_well")]
    SomewhatWell,
    #[serde(alias = "Very Well", alias = "very_well")]
    VeryWell,
    /// Binary judgment, positive.
    #[serde(alias = "match", alias = "true")]
    Match,
    /// Binary judgment, negative.
    #[serde(alias = "non-match", alias = "NoMatch", alias = "false")]
    NonMatch,
}

impl MatchLabel {
    pub const GRADED: [MatchLabel; 4] = [
        Self::NotAtAll,
        Self::SomewhatNotWell,
        Self::SomewhatWell,
        Self::VeryWell,
    ];

    pub fn is_positive(self) -> bool {
        matches!(self, Self::SomewhatWell | Self::VeryWell | Self::Match)
    }
}

impl FromStr for MatchLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown match label `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchJudgment {
    #[serde(default)]
    pub query_id: String,
    pub kp_id: String,
    pub comment_id: String,
    pub label: MatchLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

pub fn load_judgments(reader: impl BufRead) -> Result<Vec<MatchJudgment>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Whether the share of positive labels reaches `rule`. No labels is a non-match.
pub fn vote_aggregate(labels: &[MatchLabel], rule: f64) -> bool {
    if labels.is_empty() {
        return false;
    }
    let positive = labels.iter().filter(|l| l.is_positive()).count();
    positive as f64 / labels.len() as f64 >= rule
}

pub type Pair = (String, String);

/// Pairs whose aggregated vote is a match, grouped over all annotators.
pub fn judged_matches(judgments: &[MatchJudgment], rule: f64) -> HashSet<Pair> {
    let mut by_pair: BTreeMap<Pair, Vec<MatchLabel>> = BTreeMap::new();
    for j in judgments {
        by_pair
            .entry((j.kp_id.clone(), j.comment_id.clone()))
            .or_default()
            .push(j.label);
    }
    by_pair
        .into_iter()
        .filter(|(_, labels)| vote_aggregate(labels, rule))
        .map(|(p, _)| p)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// Precision is the share of predicted pairs judged a match; recall is the
/// share of gold pairs that were predicted. An empty predicted or gold set
/// contributes 0 to the respective side.
pub fn match_prf(
    judgments: &[MatchJudgment],
    predicted: &HashSet<Pair>,
    gold: &HashSet<Pair>,
    rule: f64,
) -> Prf {
    let judged = judged_matches(judgments, rule);
    let p = if predicted.is_empty() {
        0.0
    } else {
        predicted.intersection(&judged).count() as f64 / predicted.len() as f64
    };
    let r = if gold.is_empty() {
        0.0
    } else {
        gold.intersection(predicted).count() as f64 / gold.len() as f64
    };
    Prf::new(p, r)
}
