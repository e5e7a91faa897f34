use serde::{Deserialize, Serialize};

use super::{AttributionResult, OutputSpace};
use crate::reasoner::{FeatureSet, Provenance};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceAttribution {
    pub passage_id: String,
    pub text: String,
    pub similarity: f64,
    pub shapley: f64,
    /// Feature slot, usable as an audit mask index.
    pub slot: usize,
}

/// Per-answer explanation payload: evidence sorted by Shapley value,
/// descending. NULL slots are omitted (their value is zero by construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub answer_id: String,
    pub baseline: f64,
    pub total: f64,
    pub output_space: OutputSpace,
    pub bias_term: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,
    pub evidence: Vec<EvidenceAttribution>,
}

impl Explanation {
    pub fn new<T: Scalar>(
        answer_id: &str,
        result: &AttributionResult,
        features: &FeatureSet<T>,
        text_of: impl Fn(&str) -> Option<String>,
    ) -> Self {
        let mut evidence: Vec<EvidenceAttribution> = features
            .provenance
            .iter()
            .enumerate()
            .filter_map(|(slot, p)| match p {
                Provenance::Evidence {
                    passage, similarity, ..
                } => Some(EvidenceAttribution {
                    passage_id: passage.passage_id.clone(),
                    text: text_of(&passage.passage_id).unwrap_or_default(),
                    similarity: *similarity,
                    shapley: result.phi.get(slot).copied().unwrap_or(0.0),
                    slot,
                }),
                Provenance::Null => None,
            })
            .collect();
        evidence.sort_by(|a, b| b.shapley.total_cmp(&a.shapley).then(a.slot.cmp(&b.slot)));
        Self {
            answer_id: answer_id.to_string(),
            baseline: result.baseline,
            total: result.total,
            output_space: result.output_space,
            bias_term: result.bias_term,
            permutations: result.permutations,
            evidence,
        }
    }
}
