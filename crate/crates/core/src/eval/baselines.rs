use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::index::AnswerPartitionIndex;
use crate::ranking::{RankBasis, RankedAnswerList};
use crate::scalar::Scalar;
use crate::AnswerSet;

/// Ranks answers by training-corpus count, ties by answer id.
pub fn freq_baseline(counts: &BTreeMap<String, u64>) -> Result<RankedAnswerList, EvalError> {
    if counts.is_empty() {
        return Err(EvalError::Empty("counts"));
    }
    let answers = AnswerSet::new(counts.keys().cloned());
    let scores: Vec<f64> = answers.ids().iter().map(|a| counts[a] as f64).collect();
    Ok(RankedAnswerList::from_scores(&answers, &scores, None, &[], RankBasis::Uncorrected))
}

/// How the summed top-`k` cosines are normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum McsDivisor {
    /// Always divide by `k`; missing hits count as zero.
    #[default]
    FixedK,
    /// Divide by the number of hits actually retrieved.
    Retrieved,
}

/// Mean cosine similarity of each answer's top-`k` evidence to the query.
/// Answers without a partition score zero.
pub fn mcs_baseline<T: Scalar>(
    query: &[T],
    index: &AnswerPartitionIndex,
    answers: &AnswerSet,
    k: usize,
    divisor: McsDivisor,
) -> Result<RankedAnswerList, EvalError> {
    if k == 0 {
        return Err(EvalError::Invalid("k must be positive".into()));
    }
    let present: Vec<String> = answers.ids().iter().filter(|a| index.contains(a)).cloned().collect();
    let hits = index.topk_all(&present, query, k, None)?;
    let scores: Vec<f64> = answers
        .ids()
        .iter()
        .map(|a| match hits.get(a) {
            Some(h) if !h.is_empty() => {
                let sum: f64 = h.iter().map(|x| x.similarity).sum();
                match divisor {
                    McsDivisor::FixedK => sum / k as f64,
                    McsDivisor::Retrieved => sum / h.len() as f64,
                }
            }
            _ => 0.0,
        })
        .collect();
    let mut list = RankedAnswerList::from_scores(answers, &scores, None, &[], RankBasis::Uncorrected);
    list.k = Some(k);
    Ok(list)
}
