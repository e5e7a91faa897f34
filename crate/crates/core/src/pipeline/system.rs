use std::collections::{BTreeMap, HashMap};
use std::io::BufReader;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stages::{read_json, ArtifactLayout, IngestManifest};
use super::PipelineError;
use crate::attribution::{
    attach_bias_feature, shapley_exact, shapley_permutation, Explanation, OutputSpace, PermutationPlan,
    ReasonerCoalition,
};
use crate::corpus::io::read_masked_corpus;
use crate::diffkernel::sigmoid;
use crate::encoder::MlmModel;
use crate::eval::{freq_baseline, mcs_baseline, McsDivisor};
use crate::index::{AnswerPartitionIndex, EvidenceHit, MetadataFilter};
use crate::ranking::{RankBasis, RankedAnswerList};
use crate::reasoner::{bias_correction, FeatureSet, Reasoner};
use crate::scalar::Scalar;
use crate::AnswerSet;

/// Loaded models, index and bias counts: everything inference needs.
/// Immutable once built; all methods take `&self`.
#[derive(Debug, Clone)]
pub struct R2eSystem<T: Scalar> {
    pub mlm: MlmModel<T>,
    pub reasoner: Reasoner<T>,
    pub index: AnswerPartitionIndex,
    /// Training-split passages per answer.
    pub counts: BTreeMap<String, u64>,
    pub answers: AnswerSet,
    /// Passage id → masked text, for passages in the index.
    pub texts: HashMap<String, String>,
    pub split_documents: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankOptions {
    pub k: usize,
    pub c: f64,
    pub basis: RankBasis,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            k: 64,
            c: 0.5,
            basis: RankBasis::Corrected,
        }
    }
}

/// A ranking plus the feature sets it was computed from.
#[derive(Debug, Clone)]
pub struct RankOutput<T: Scalar> {
    pub list: RankedAnswerList,
    pub features: BTreeMap<String, FeatureSet<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    pub space: OutputSpace,
    pub permutations: usize,
    pub seed: u64,
    /// Enumerate coalitions exactly instead of sampling (small `k` only).
    pub exact: bool,
    /// Bias-correction strength; attached as an extra attribution in logit
    /// space.
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Indexed passages per answer.
    pub index_counts: BTreeMap<String, usize>,
    /// Training-split passages per answer (bias-correction counts).
    pub training_counts: BTreeMap<String, u64>,
    pub split_documents: BTreeMap<String, usize>,
    pub total_indexed: usize,
    pub index_checksum: String,
    pub hidden: usize,
    pub k: usize,
}

impl<T: Scalar> R2eSystem<T> {
    /// Loads every inference artifact, naming the missing stage if one is
    /// absent.
    pub fn load(layout: &ArtifactLayout) -> Result<Self, PipelineError> {
        layout.require(&layout.manifest(), "ingest")?;
        layout.require(&layout.encoder(), "train-retriever")?;
        layout.require(&layout.answer_counts(), "train-retriever")?;
        layout.require(&layout.index(), "build-index")?;
        layout.require(&layout.reasoner(), "train-reasoner")?;
        let manifest: IngestManifest = read_json(&layout.manifest())?;
        let mlm = MlmModel::<T>::load(&layout.encoder())?;
        let reasoner = Reasoner::<T>::load(&layout.reasoner())?;
        let index = AnswerPartitionIndex::read(&mut BufReader::new(std::fs::File::open(layout.index())?))?;
        let counts: BTreeMap<String, u64> = read_json(&layout.answer_counts())?;
        let passages = read_masked_corpus(BufReader::new(std::fs::File::open(layout.corpus())?))?;
        let mut texts = HashMap::new();
        for p in passages {
            if index.contains(&p.answer_id) {
                texts.insert(p.passage_id, p.masked_text);
            }
        }
        Self::new(mlm, reasoner, index, counts, texts, manifest.split_documents)
    }

    pub fn new(
        mlm: MlmModel<T>,
        reasoner: Reasoner<T>,
        index: AnswerPartitionIndex,
        counts: BTreeMap<String, u64>,
        texts: HashMap<String, String>,
        split_documents: BTreeMap<String, usize>,
    ) -> Result<Self, PipelineError> {
        if mlm.hidden() != reasoner.hidden() || index.hidden() != mlm.hidden() {
            return Err(PipelineError::Config(format!(
                "width mismatch: encoder {}, reasoner {}, index {}",
                mlm.hidden(),
                reasoner.hidden(),
                index.hidden()
            )));
        }
        let answers = mlm.answers.clone();
        let mut counts = counts;
        for a in answers.ids() {
            counts.entry(a.clone()).or_insert(0);
        }
        Ok(Self {
            mlm,
            reasoner,
            index,
            counts,
            answers,
            texts,
            split_documents,
        })
    }

    pub fn check_answer(&self, answer: &str) -> Result<(), PipelineError> {
        if self.answers.contains(answer) {
            Ok(())
        } else {
            Err(PipelineError::UnknownAnswer(answer.to_string()))
        }
    }

    /// Retriever embedding of a cloze query.
    pub fn embed_query(&self, text: &str) -> Result<Vec<T>, PipelineError> {
        if text.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        Ok(self.mlm.encode_text(text)?)
    }

    /// `f_c` for every answer, in answer-set order.
    pub fn corrections(&self, c: f64) -> Result<Vec<f64>, PipelineError> {
        let counts: Vec<u64> = self.answers.ids().iter().map(|a| self.counts[a]).collect();
        Ok(bias_correction(&counts, c)?)
    }

    pub fn correction_for(&self, answer: &str, c: f64) -> Result<f64, PipelineError> {
        self.check_answer(answer)?;
        let i = self.answers.position(answer).expect("checked above");
        Ok(self.corrections(c)?[i])
    }

    pub fn features(
        &self,
        query: &[T],
        answer: &str,
        k: usize,
        filter: Option<&MetadataFilter>,
    ) -> Result<FeatureSet<T>, PipelineError> {
        self.check_answer(answer)?;
        Ok(self.reasoner.features_from_index_k(query, answer, &self.index, filter, k)?)
    }

    /// `(logit, probability, features)` for one answer.
    pub fn score_answer(
        &self,
        query_text: &str,
        answer: &str,
        k: usize,
        filter: Option<&MetadataFilter>,
    ) -> Result<(f64, f64, FeatureSet<T>), PipelineError> {
        let q = self.embed_query(query_text)?;
        let f = self.features(&q, answer, k, filter)?;
        let z = self.reasoner.logit_masked(&f, &[])?.as_f64();
        Ok((z, sigmoid(z), f))
    }

    /// Scores every answer (in parallel) and ranks them.
    pub fn rank_embedding(
        &self,
        query: &[T],
        opts: &RankOptions,
        filter: Option<&MetadataFilter>,
    ) -> Result<RankOutput<T>, PipelineError> {
        let scored: Vec<(f64, FeatureSet<T>)> = self
            .answers
            .ids()
            .par_iter()
            .map(|a| {
                let f = self.features(query, a, opts.k, filter)?;
                let z = self.reasoner.logit_masked(&f, &[])?.as_f64();
                Ok((z, f))
            })
            .collect::<Result<_, PipelineError>>()?;
        let logits: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let fc = self.corrections(opts.c)?;
        let mut list = RankedAnswerList::from_scores(&self.answers, &logits, Some(&probs), &fc, opts.basis);
        list.c = Some(opts.c);
        list.k = Some(opts.k);
        let features = self.answers.ids().iter().cloned().zip(scored.into_iter().map(|s| s.1)).collect();
        Ok(RankOutput { list, features })
    }

    pub fn rank(&self, query_text: &str, opts: &RankOptions, filter: Option<&MetadataFilter>) -> Result<RankOutput<T>, PipelineError> {
        let q = self.embed_query(query_text)?;
        self.rank_embedding(&q, opts, filter)
    }

    /// Retriever-only ranking by MLM logit.
    pub fn rank_mlm(&self, query_text: &str) -> Result<RankedAnswerList, PipelineError> {
        if query_text.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        Ok(self.mlm.rank_answers(&self.mlm.tokenize(query_text))?)
    }

    pub fn rank_mcs(&self, query_text: &str, k: usize) -> Result<RankedAnswerList, PipelineError> {
        let q = self.embed_query(query_text)?;
        Ok(mcs_baseline(&q, &self.index, &self.answers, k, McsDivisor::FixedK)?)
    }

    pub fn rank_freq(&self) -> Result<RankedAnswerList, PipelineError> {
        Ok(freq_baseline(&self.counts)?)
    }

    /// Shapley attribution of one answer's score to its evidence slots.
    pub fn explain(&self, answer: &str, features: &FeatureSet<T>, opts: &ExplainOptions) -> Result<Explanation, PipelineError> {
        self.check_answer(answer)?;
        let game = ReasonerCoalition {
            reasoner: &self.reasoner,
            features,
            space: opts.space,
        };
        let mut result = if opts.exact {
            shapley_exact(&game, opts.space)?
        } else {
            let plan = PermutationPlan::new(features.k(), opts.permutations, opts.seed);
            shapley_permutation(&game, &plan, opts.space)?
        };
        if opts.space == OutputSpace::Logit {
            result = attach_bias_feature(result, self.correction_for(answer, opts.c)?)?;
        }
        Ok(Explanation::new(answer, &result, features, |id| self.texts.get(id).cloned()))
    }

    /// Raw top-`k` hits for an answer.
    pub fn evidence(
        &self,
        answer: &str,
        query_text: &str,
        k: usize,
        filter: Option<&MetadataFilter>,
    ) -> Result<Vec<EvidenceHit>, PipelineError> {
        self.check_answer(answer)?;
        let q = self.embed_query(query_text)?;
        if !self.index.contains(answer) {
            return Ok(Vec::new());
        }
        Ok(self.index.topk(answer, &q, k, filter)?)
    }

    pub fn stats(&self) -> CorpusStats {
        let mut index_counts = self.index.counts();
        for a in self.answers.ids() {
            index_counts.entry(a.clone()).or_insert(0);
        }
        CorpusStats {
            index_counts,
            training_counts: self.counts.clone(),
            split_documents: self.split_documents.clone(),
            total_indexed: self.index.total_rows(),
            index_checksum: self.index.checksum(),
            hidden: self.mlm.hidden(),
            k: self.reasoner.config.k,
        }
    }
}
