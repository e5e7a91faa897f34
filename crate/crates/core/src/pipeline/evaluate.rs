use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PipelineError, R2eSystem, RankOptions};
use crate::eval::{auroc, metrics_from_ranks, Aggregation, EvalError, EvalRecord, RankingMetrics, DEFAULT_CUTOFFS};
use crate::index::MetadataFilter;
use crate::ranking::{RankBasis, RankedAnswerList};
use crate::scalar::Scalar;

/// Rankers compared by [`evaluate`], in report order.
pub const METHODS: [&str; 5] = ["r2e-cor", "r2e-uncor", "mcs", "mlm", "freq"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateOptions {
    pub k: usize,
    pub c: f64,
    pub cutoffs: Vec<usize>,
    pub aggregation: Aggregation,
    /// Restrict retrieval to evidence published before each record's year.
    pub before_query_year: bool,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            k: 64,
            c: 0.5,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            aggregation: Aggregation::Micro,
            before_query_year: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    /// Over positive records; `None` without any.
    pub ranking: Option<RankingMetrics>,
    /// `None` unless both labels occur.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub records: usize,
    pub positives: usize,
    /// Records naming an answer outside the answer set.
    pub skipped: usize,
    pub k: usize,
    pub c: f64,
    pub methods: BTreeMap<String, MethodReport>,
}

/// One ranking per method for a single query.
struct QueryRankings([RankedAnswerList; 5]);

fn rankings<T: Scalar>(
    sys: &R2eSystem<T>,
    query: &str,
    opts: &EvaluateOptions,
    filter: Option<&MetadataFilter>,
    freq: &RankedAnswerList,
) -> Result<QueryRankings, PipelineError> {
    let q = sys.embed_query(query)?;
    let rank_opts = RankOptions {
        k: opts.k,
        c: opts.c,
        basis: RankBasis::Corrected,
    };
    let cor = sys.rank_embedding(&q, &rank_opts, filter)?.list;
    let ids = sys.answers.ids();
    let logits: Vec<f64> = ids.iter().map(|a| cor.get(a).expect("every answer is ranked").logit).collect();
    let probs: Vec<f64> = ids.iter().map(|a| cor.get(a).and_then(|e| e.prob).unwrap_or(0.0)).collect();
    let uncor = RankedAnswerList::from_scores(&sys.answers, &logits, Some(&probs), &[], RankBasis::Uncorrected);
    let mcs = sys.rank_mcs(query, opts.k)?;
    let mlm = sys.rank_mlm(query)?;
    Ok(QueryRankings([cor, uncor, mcs, mlm, freq.clone()]))
}

/// Ranking metrics (over positive records) and AUROC (over all records) for
/// R2E with and without bias correction and the MCS, MLM and FREQ baselines.
pub fn evaluate<T: Scalar>(
    sys: &R2eSystem<T>,
    records: &[EvalRecord],
    opts: &EvaluateOptions,
) -> Result<EvaluationReport, PipelineError> {
    if records.is_empty() {
        return Err(EvalError::Empty("evaluation records").into());
    }
    let freq = sys.rank_freq()?;
    let mut cache: BTreeMap<(String, Option<u32>), QueryRankings> = BTreeMap::new();
    let mut ranks: [Vec<(String, usize)>; 5] = Default::default();
    let mut scores: [Vec<f64>; 5] = Default::default();
    let mut labels = Vec::new();
    let mut skipped = 0;
    for r in records {
        if !sys.answers.contains(&r.answer_id) {
            skipped += 1;
            continue;
        }
        let cutoff_year = if opts.before_query_year { r.year } else { None };
        let key = (r.query.clone(), cutoff_year);
        if !cache.contains_key(&key) {
            let filter = cutoff_year.map(|y| MetadataFilter {
                max_year: Some(y.saturating_sub(1)),
                sources: None,
            });
            cache.insert(key.clone(), rankings(sys, &r.query, opts, filter.as_ref(), &freq)?);
        }
        let lists = &cache[&key].0;
        for (m, list) in lists.iter().enumerate() {
            let e = list.get(&r.answer_id).expect("every answer is ranked");
            scores[m].push(if m == 0 { e.corrected_logit } else { e.logit });
            if r.label {
                ranks[m].push((r.answer_id.clone(), e.rank));
            }
        }
        labels.push(r.label);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let mut methods = BTreeMap::new();
    for (m, name) in METHODS.iter().enumerate() {
        let ranking = if ranks[m].is_empty() {
            None
        } else {
            Some(metrics_from_ranks(&ranks[m], &opts.cutoffs, opts.aggregation)?)
        };
        let auroc = match auroc(&scores[m], &labels) {
            Ok(a) => Some(a),
            Err(EvalError::SingleClass) => None,
            Err(e) => return Err(e.into()),
        };
        methods.insert(name.to_string(), MethodReport { ranking, auroc });
    }
    Ok(EvaluationReport {
        records: records.len(),
        positives,
        skipped,
        k: opts.k,
        c: opts.c,
        methods,
    })
}
