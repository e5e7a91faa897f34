use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureSet, Provenance, Reasoner, ReasonerError};
use crate::diffkernel::{backward, AdamW, AdamWConfig, KernelError, ParameterSet, Tape, Tensor};
use crate::index::AnswerPartitionIndex;
use crate::scalar::Scalar;

/// A query passage from `D^q`: its frozen-retriever embedding and true
/// (masked) answer.
#[derive(Debug, Clone)]
pub struct QueryPassage {
    pub passage_id: String,
    pub doc_id: String,
    pub answer_id: String,
    pub embedding: Vec<f64>,
}

/// `(query, candidate answer, label)`; `query` indexes the query list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub query: usize,
    pub answer: String,
    pub label: bool,
}

/// One positive per query with its true answer, plus one negative whose
/// answer is drawn uniformly from the other answers.
pub fn sample_negatives(
    positives: &[String],
    answers: &[String],
    seed: u64,
) -> Result<Vec<TrainingExample>, ReasonerError> {
    if answers.len() < 2 {
        return Err(ReasonerError::SingletonAnswerSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * positives.len());
    for (q, a) in positives.iter().enumerate() {
        let pos = answers
            .iter()
            .position(|x| x == a)
            .ok_or_else(|| ReasonerError::Config(format!("answer `{a}` is not in the answer set")))?;
        let mut n = rng.random_range(0..answers.len() - 1);
        if n >= pos {
            n += 1;
        }
        out.push(TrainingExample {
            query: q,
            answer: a.clone(),
            label: true,
        });
        out.push(TrainingExample {
            query: q,
            answer: answers[n].clone(),
            label: false,
        });
    }
    Ok(out)
}

/// Replaces each evidence slot by NULL with probability `rate`; if `rate`
/// is `None` it is drawn from `U(0, 1)`. Returns the new set and the rate used.
pub fn apply_evidence_dropout<T: Scalar, R: Rng + ?Sized>(
    features: &FeatureSet<T>,
    rate: Option<f64>,
    rng: &mut R,
) -> (FeatureSet<T>, f64) {
    let r = rate.unwrap_or_else(|| rng.random::<f64>());
    let drop = dropout_flags(features.k(), r, rng);
    let idx: Vec<usize> = (0..features.k()).filter(|&i| drop[i]).collect();
    (features.with_nulls(&idx).expect("indices are in range"), r)
}

fn dropout_flags<R: Rng + ?Sized>(k: usize, rate: f64, rng: &mut R) -> Vec<bool> {
    (0..k).map(|_| rng.random::<f64>() < rate).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Fraction of queries held out for validation (no dropout, fixed
    /// negatives).
    pub validation_fraction: f64,
    pub evidence_dropout: bool,
    /// Negative control: train on random labels.
    #[serde(default)]
    pub shuffle_labels: bool,
}

impl Default for ReasonerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 2048,
            optimizer: AdamWConfig {
                weight_decay: 0.001,
                ..AdamWConfig::default()
            },
            seed: 0,
            validation_fraction: 0.1,
            evidence_dropout: true,
            shuffle_labels: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerTrainReport {
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<ReasonerEpoch>,
    pub updates: usize,
    pub train_queries: usize,
    pub validation_queries: usize,
}

/// Evidence rows retrieved for one (query, answer) pair, cached because
/// retrieval is independent of the trainable weights.
type EvidenceCache = HashMap<(usize, String), Tensor<f64>>;

fn evidence_rows(
    index: &AnswerPartitionIndex,
    query: &[f64],
    answer: &str,
    k: usize,
) -> Result<Tensor<f64>, ReasonerError> {
    let h = index.hidden();
    if !index.contains(answer) {
        return Ok(Tensor::zeros(&[0, h]));
    }
    let hits = index.topk(answer, query, k, None)?;
    let mut data = Vec::with_capacity(hits.len() * h);
    for hit in &hits {
        data.extend(index.row(answer, hit.row)?.iter().map(|&v| v as f64));
    }
    Ok(Tensor::matrix(hits.len(), h, data)?)
}

fn fill_cache(
    cache: &mut EvidenceCache,
    examples: &[TrainingExample],
    queries: &[QueryPassage],
    index: &AnswerPartitionIndex,
    k: usize,
) -> Result<(), ReasonerError> {
    let missing: BTreeSet<(usize, String)> = examples
        .iter()
        .map(|e| (e.query, e.answer.clone()))
        .filter(|key| !cache.contains_key(key))
        .collect();
    let found: Vec<((usize, String), Tensor<f64>)> = missing
        .into_par_iter()
        .map(|(q, a)| {
            let rows = evidence_rows(index, &queries[q].embedding, &a, k)?;
            Ok(((q, a), rows))
        })
        .collect::<Result<_, ReasonerError>>()?;
    cache.extend(found);
    Ok(())
}

/// BCE loss graph for one example: fused evidence (padded with NULL to
/// `k`), slots flagged in `dropped` also set to NULL.
fn example_loss_on(
    model: &Reasoner<f64>,
    tape: &mut Tape<'_, f64>,
    query: &[f64],
    evidence: &Tensor<f64>,
    dropped: &[bool],
    label: bool,
) -> Result<crate::diffkernel::NodeId, KernelError> {
    let k = model.config.k;
    let h = model.config.hidden;
    let n = evidence.rows().min(k);
    let features = if n == 0 {
        tape.leaf(Tensor::zeros(&[k, h]))?
    } else {
        let ev = if evidence.rows() > k {
            Tensor::matrix(k, h, evidence.data()[..k * h].to_vec())?
        } else {
            evidence.clone()
        };
        let f = model.pair_features_on(tape, query, &ev)?;
        if n < k {
            let pad = tape.leaf(Tensor::zeros(&[k - n, h]))?;
            tape.concat_rows(&[f, pad])?
        } else {
            f
        }
    };
    let null: Vec<bool> = (0..k).map(|i| i >= n || dropped.get(i).copied().unwrap_or(false)).collect();
    let z = model.combine_on(tape, features, &null)?;
    tape.bce_with_logits(z, if label { 1.0 } else { 0.0 })
}

fn mean_eval(
    model: &Reasoner<f64>,
    examples: &[TrainingExample],
    queries: &[QueryPassage],
    cache: &EvidenceCache,
) -> Result<(f64, f64), ReasonerError> {
    let k = model.config.k;
    let results: Vec<(f64, bool)> = examples
        .par_iter()
        .map(|e| {
            let mut tape = Tape::new(&model.params);
            let ev = &cache[&(e.query, e.answer.clone())];
            let l = example_loss_on(model, &mut tape, &queries[e.query].embedding, ev, &vec![false; k], e.label)?;
            let loss = tape.value(l).data()[0];
            // bce = softplus(-z) for positives; z > 0 iff loss < ln 2.
            let correct = (loss < std::f64::consts::LN_2) || (loss == std::f64::consts::LN_2 && !e.label);
            Ok((loss, correct))
        })
        .collect::<Result<_, ReasonerError>>()?;
    let n = results.len() as f64;
    Ok((
        results.iter().map(|r| r.0).sum::<f64>() / n,
        results.iter().filter(|r| r.1).count() as f64 / n,
    ))
}

/// Rejects query passages whose documents also contribute evidence.
pub fn check_disjoint(queries: &[QueryPassage], index: &AnswerPartitionIndex) -> Result<(), ReasonerError> {
    let mut evidence_docs = BTreeSet::new();
    for a in index.answer_ids() {
        for r in 0..index.partition_len(a) {
            if let Some(p) = index.passage(a, r) {
                evidence_docs.insert(p.doc_id.as_str());
            }
        }
    }
    match queries.iter().find(|q| evidence_docs.contains(q.doc_id.as_str())) {
        Some(q) => Err(ReasonerError::QueryEvidenceOverlap(q.doc_id.clone())),
        None => Ok(()),
    }
}

/// Trains the reasoner with BCE on balanced positive/negative examples.
/// Evidence always comes from the candidate answer's partition, so
/// negatives see mismatched evidence. Gradients are computed per example in
/// parallel and reduced in a fixed order, so results do not depend on the
/// thread count.
pub fn train_reasoner(
    model: &mut Reasoner<f64>,
    queries: &[QueryPassage],
    answers: &[String],
    index: &AnswerPartitionIndex,
    cfg: &ReasonerTrainConfig,
) -> Result<ReasonerTrainReport, ReasonerError> {
    if queries.is_empty() {
        return Err(ReasonerError::EmptyQueries);
    }
    if answers.len() < 2 {
        return Err(ReasonerError::SingletonAnswerSet);
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(ReasonerError::Config("validation fraction must be in [0, 1)".into()));
    }
    for q in queries {
        if q.embedding.len() != model.config.hidden {
            return Err(ReasonerError::Width {
                expected: model.config.hidden,
                got: q.embedding.len(),
            });
        }
    }
    if index.hidden() != model.config.hidden {
        return Err(ReasonerError::Width {
            expected: model.config.hidden,
            got: index.hidden(),
        });
    }
    check_disjoint(queries, index)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((queries.len() as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(queries.len() - 1);
    let (val_q, train_q) = order.split_at(n_val);
    let positives: Vec<String> = queries.iter().map(|q| q.answer_id.clone()).collect();
    let k = model.config.k;

    let mut cache = EvidenceCache::new();
    let val_examples: Vec<TrainingExample> = {
        let all = sample_negatives(&positives, answers, cfg.seed ^ 0x5eed_0f_7a1)?;
        let keep: BTreeSet<usize> = val_q.iter().copied().collect();
        all.into_iter().filter(|e| keep.contains(&e.query)).collect()
    };
    fill_cache(&mut cache, &val_examples, queries, index, k)?;
    let validate = |m: &Reasoner<f64>, cache: &EvidenceCache| -> Result<(Option<f64>, Option<f64>), ReasonerError> {
        if val_examples.is_empty() {
            return Ok((None, None));
        }
        let (l, a) = mean_eval(m, &val_examples, queries, cache)?;
        Ok((Some(l), Some(a)))
    };
    let mut report = ReasonerTrainReport {
        initial_val_loss: validate(model, &cache)?.0,
        epochs: Vec::with_capacity(cfg.epochs),
        updates: 0,
        train_queries: train_q.len(),
        validation_queries: val_q.len(),
    };
    let train_set: BTreeSet<usize> = train_q.iter().copied().collect();
    let mut opt = AdamW::new(cfg.optimizer, &model.params);
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        let epoch_seed = cfg.seed.wrapping_add(1 + epoch as u64);
        let mut examples: Vec<TrainingExample> = sample_negatives(&positives, answers, epoch_seed)?
            .into_iter()
            .filter(|e| train_set.contains(&e.query))
            .collect();
        let mut erng = ChaCha8Rng::seed_from_u64(epoch_seed ^ 0xd509_0u64);
        if cfg.shuffle_labels {
            for e in &mut examples {
                e.label = erng.random::<bool>();
            }
        }
        examples.shuffle(&mut erng);
        let drops: Vec<Vec<bool>> = examples
            .iter()
            .map(|_| {
                if cfg.evidence_dropout {
                    let r = erng.random::<f64>();
                    dropout_flags(k, r, &mut erng)
                } else {
                    vec![false; k]
                }
            })
            .collect();
        fill_cache(&mut cache, &examples, queries, index, k)?;

        let mut total = 0.0;
        for (chunk, chunk_drops) in examples.chunks(batch).zip(drops.chunks(batch)) {
            let results: Vec<(f64, ParameterSet<f64>)> = chunk
                .par_iter()
                .zip(chunk_drops)
                .map(|(e, d)| {
                    let ev = &cache[&(e.query, e.answer.clone())];
                    let q = &queries[e.query].embedding;
                    let graph = |t: &mut Tape<'_, f64>| example_loss_on(model, t, q, ev, d, e.label);
                    backward(&graph, &model.params)
                })
                .collect::<Result<_, KernelError>>()?;
            let mut grads = model.params.zeros_like();
            for (loss, g) in &results {
                total += loss;
                grads.accumulate(g)?;
            }
            grads.scale(1.0 / chunk.len() as f64);
            opt.step(&mut model.params, &grads)?;
            report.updates += 1;
        }
        let (val_loss, val_accuracy) = validate(model, &cache)?;
        let stats = ReasonerEpoch {
            epoch: epoch + 1,
            train_loss: total / examples.len().max(1) as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "reasoner epoch {}: train {:.4} val {} acc {}",
            stats.epoch,
            stats.train_loss,
            stats.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            stats.val_accuracy.map_or("-".into(), |v| format!("{v:.3}")),
        );
        report.epochs.push(stats);
    }
    Ok(report)
}

/// Feature set for an explicit list of evidence rows, all marked with the
/// given provenance; used by tests and tools that bypass the index.
pub fn features_from_rows<T: Scalar>(
    model: &Reasoner<T>,
    query: &[T],
    rows: &[Vec<T>],
) -> Result<FeatureSet<T>, ReasonerError> {
    let ev: Vec<(Vec<T>, Provenance)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                r.clone(),
                Provenance::Evidence {
                    passage: crate::index::PassageRef {
                        passage_id: format!("row{i}"),
                        doc_id: format!("row{i}"),
                        year: None,
                        source: String::new(),
                    },
                    similarity: 0.0,
                    row: i,
                },
            )
        })
        .collect();
    model.features(query, &ev)
}
