use serde::{Deserialize, Serialize};

use crate::answers::AnswerSet;

/// Which score the ranks were computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankBasis {
    Uncorrected,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswer {
    pub answer_id: String,
    /// Raw model score: a logit for the neural rankers, the count or mean
    /// cosine for the baselines.
    pub logit: f64,
    pub prob: Option<f64>,
    pub f_c: f64,
    pub corrected_logit: f64,
    /// 1-based.
    pub rank: usize,
}

/// Every answer with its scores, sorted by rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswerList {
    pub entries: Vec<RankedAnswer>,
    pub basis: RankBasis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl RankedAnswerList {
    /// Ranks by the chosen basis, descending, ties by ascending answer id.
    /// `f_c` may be empty, meaning no correction.
    pub fn from_scores(
        answers: &AnswerSet,
        logits: &[f64],
        probs: Option<&[f64]>,
        f_c: &[f64],
        basis: RankBasis,
    ) -> Self {
        let n = answers.len();
        debug_assert_eq!(logits.len(), n);
        let fc = |i: usize| f_c.get(i).copied().unwrap_or(0.0);
        let key = |i: usize| match basis {
            RankBasis::Uncorrected => logits[i],
            RankBasis::Corrected => logits[i] + fc(i),
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        let entries = order
            .into_iter()
            .enumerate()
            .map(|(r, i)| RankedAnswer {
                answer_id: answers.ids()[i].clone(),
                logit: logits[i],
                prob: probs.map(|p| p[i]),
                f_c: fc(i),
                corrected_logit: logits[i] + fc(i),
                rank: r + 1,
            })
            .collect();
        Self {
            entries,
            basis,
            c: None,
            k: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rank_of(&self, answer_id: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.answer_id == answer_id).map(|e| e.rank)
    }

    pub fn get(&self, answer_id: &str) -> Option<&RankedAnswer> {
        self.entries.iter().find(|e| e.answer_id == answer_id)
    }

    pub fn top(&self, n: usize) -> &[RankedAnswer] {
        &self.entries[..n.min(self.entries.len())]
    }

    pub fn order(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.answer_id.as_str()).collect()
    }
}
