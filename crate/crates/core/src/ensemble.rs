//! Majority voting over ensemble members.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::{Prediction, Probs};
use crate::error::{Error, Result};
use crate::taxonomy::NliLabel;

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.6;
const SUM_TIE_EPSILON: f64 = 1e-12;

/// Tie-break preference when summed probabilities are equal.
pub const TIE_PREFERENCE: [NliLabel; 3] = [
    NliLabel::Contradiction,
    NliLabel::Entailment,
    NliLabel::Neutral,
];

/// One line of `decisions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDecision {
    pub pair_id: String,
    pub votes: BTreeMap<String, NliLabel>,
    #[serde(rename = "final")]
    pub final_label: NliLabel,
    pub confidence: f64,
    pub tie_broken: bool,
    /// Member-averaged probabilities.
    #[serde(rename = "probs")]
    pub mean_probs: Probs,
}

impl EnsembleDecision {
    pub fn is_inconsistent(&self) -> bool {
        self.final_label == NliLabel::Contradiction
    }
}

pub fn majority_vote(predictions: &[Prediction]) -> Result<EnsembleDecision> {
    let first = predictions.first().ok_or(Error::EmptyPredictionSet)?;
    if let Some(other) = predictions.iter().find(|p| p.pair_id != first.pair_id) {
        return Err(Error::MixedPairIds(
            first.pair_id.clone(),
            other.pair_id.clone(),
        ));
    }
    let k = predictions.len() as f64;

    let mut counts = [0usize; 3];
    let mut sums = [0.0f64; 3];
    let mut votes = BTreeMap::new();
    for p in predictions {
        let label = p.label();
        counts[label.index()] += 1;
        votes.insert(p.model_id.clone(), label);
    }
    // Fixed summation order keeps the result independent of member order.
    let mut by_model: Vec<&Prediction> = predictions.iter().collect();
    by_model.sort_by(|a, b| {
        a.model_id.cmp(&b.model_id).then(
            a.probs
                .to_array()
                .partial_cmp(&b.probs.to_array())
                .unwrap_or(std::cmp::Ordering::Equal),
        )
    });
    for p in &by_model {
        for (s, x) in sums.iter_mut().zip(p.probs.to_array()) {
            *s += x;
        }
    }

    let top = *counts.iter().max().expect("three classes");
    let tied: Vec<NliLabel> = TIE_PREFERENCE
        .into_iter()
        .filter(|l| counts[l.index()] == top)
        .collect();
    let tie_broken = tied.len() > 1;
    let final_label = if tie_broken {
        let mut best = tied[0];
        for &label in &tied[1..] {
            if sums[label.index()] > sums[best.index()] + SUM_TIE_EPSILON {
                best = label;
            }
        }
        best
    } else {
        tied[0]
    };

    let agreeing: Vec<f64> = by_model
        .iter()
        .filter(|p| p.label() == final_label)
        .map(|p| p.probs.get(final_label))
        .collect();
    let confidence = if agreeing.is_empty() {
        0.0
    } else {
        let mean = agreeing.iter().sum::<f64>() / agreeing.len() as f64;
        (agreeing.len() as f64 / k * mean).clamp(0.0, 1.0)
    };

    Ok(EnsembleDecision {
        pair_id: first.pair_id.clone(),
        votes,
        final_label,
        confidence,
        tie_broken,
        mean_probs: Probs::from_array(sums.map(|s| s / k)),
    })
}

/// Contradiction decisions with `confidence >= threshold`.
pub fn select_high_confidence(
    decisions: &[EnsembleDecision],
    threshold: f64,
) -> Vec<&EnsembleDecision> {
    decisions
        .iter()
        .filter(|d| d.final_label == NliLabel::Contradiction && d.confidence >= threshold)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(model: &str, p: [f64; 3]) -> Prediction {
        Prediction {
            pair_id: "x".into(),
            probs: Probs::from_array(p),
            model_id: model.into(),
            phase: 1,
        }
    }

    #[test]
    fn unanimity() {
        let ps = [
            pred("a", [0.05, 0.9, 0.05]),
            pred("b", [0.05, 0.9, 0.05]),
            pred("c", [0.05, 0.9, 0.05]),
        ];
        let d = majority_vote(&ps).unwrap();
        assert_eq!(d.final_label, NliLabel::Contradiction);
        assert!((d.confidence - 0.9).abs() < 1e-12);
        assert!(!d.tie_broken);
    }

    #[test]
    fn plurality() {
        let ps = [
            pred("a", [0.7, 0.2, 0.1]),
            pred("b", [0.5, 0.3, 0.2]),
            pred("c", [0.1, 0.8, 0.1]),
        ];
        let d = majority_vote(&ps).unwrap();
        assert_eq!(d.final_label, NliLabel::Entailment);
        assert!((d.confidence - 2.0 / 3.0 * 0.6).abs() < 1e-12);
    }

    #[test]
    fn three_way_tie_goes_to_largest_sum() {
        // entailment 0.9, contradiction 1.1, neutral 1.0 summed
        let ps = [
            pred("a", [0.5, 0.3, 0.2]),
            pred("b", [0.2, 0.45, 0.35]),
            pred("c", [0.2, 0.35, 0.45]),
        ];
        let d = majority_vote(&ps).unwrap();
        assert_eq!(d.final_label, NliLabel::Contradiction);
        assert!(d.tie_broken);
    }

    #[test]
    fn equal_sums_use_preference_order() {
        let ps = [pred("a", [0.6, 0.4, 0.0]), pred("b", [0.4, 0.6, 0.0])];
        let d = majority_vote(&ps).unwrap();
        assert_eq!(d.final_label, NliLabel::Contradiction);
        assert!(d.tie_broken);
    }

    #[test]
    fn errors() {
        assert!(matches!(majority_vote(&[]), Err(Error::EmptyPredictionSet)));
        let mut other = pred("b", [1.0, 0.0, 0.0]);
        other.pair_id = "y".into();
        assert!(matches!(
            majority_vote(&[pred("a", [1.0, 0.0, 0.0]), other]),
            Err(Error::MixedPairIds(..))
        ));
    }

    #[test]
    fn threshold_extremes() {
        let sure =
            majority_vote(&[pred("a", [0.0, 1.0, 0.0]), pred("b", [0.0, 1.0, 0.0])]).unwrap();
        let unsure =
            majority_vote(&[pred("a", [0.1, 0.8, 0.1]), pred("b", [0.1, 0.8, 0.1])]).unwrap();
        let ent = majority_vote(&[pred("a", [1.0, 0.0, 0.0])]).unwrap();
        let all = vec![sure.clone(), unsure.clone(), ent];
        assert_eq!(select_high_confidence(&all, 0.0).len(), 2);
        assert_eq!(select_high_confidence(&all, 1.0), vec![&sure]);
    }

    #[test]
    fn decision_record_shape() {
        let d = majority_vote(&[pred("m1", [0.0, 1.0, 0.0])]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(
            json,
            r#"{"pair_id":"x","votes":{"m1":"contradiction"},"final":"contradiction","confidence":1.0,"tie_broken":false,"probs":{"entailment":0.0,"contradiction":1.0,"neutral":0.0}}"#
        );
    }
}
