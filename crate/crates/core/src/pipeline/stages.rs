use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::io::{read_masked_corpus, write_masked_corpus};
use crate::corpus::{build_masked_corpus, build_splits, CorpusSplits, EntityDictionary, MaskedPassage, RawDocument, Split, SplitPolicy, Vocab};
use crate::encoder::{embed_corpus, train_mlm, EncoderConfig, MlmExample, MlmModel, MlmTrainConfig, MlmTrainReport};
use crate::index::{AnswerPartitionIndex, IndexEntry, PassageRef};
use crate::reasoner::{train_reasoner, QueryPassage, Reasoner, ReasonerConfig, ReasonerTrainConfig, ReasonerTrainReport};
use crate::scalar::{DType, Scalar};
use crate::AnswerSet;

/// File layout of a pipeline artifact directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactLayout {
    pub root: PathBuf,
}

impl ArtifactLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn encoder(&self) -> PathBuf {
        self.root.join("encoder")
    }

    pub fn answer_counts(&self) -> PathBuf {
        self.root.join("answer_counts.json")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index.bin")
    }

    pub fn reasoner(&self) -> PathBuf {
        self.root.join("reasoner")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.json"))
    }

    /// Errors with the producing stage's name if `path` does not exist.
    pub fn require(&self, path: &Path, stage: &'static str) -> Result<(), PipelineError> {
        if path.exists() {
            Ok(())
        } else {
            Err(PipelineError::MissingArtifact {
                stage,
                path: path.to_path_buf(),
            })
        }
    }
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub(crate) fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D, PipelineError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Summary written next to the ingested corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub documents: usize,
    pub passages: usize,
    /// The answer set: every dictionary entity.
    pub answers: Vec<String>,
    pub passages_per_answer: BTreeMap<String, usize>,
    pub split_documents: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub passages: Vec<MaskedPassage>,
    pub splits: CorpusSplits,
    pub manifest: IngestManifest,
}

/// Links, masks and splits a document collection.
pub fn ingest(docs: &[RawDocument], dict: &EntityDictionary, policy: &SplitPolicy) -> Result<IngestOutput, PipelineError> {
    let splits = build_splits(docs, policy)?;
    let passages = build_masked_corpus(docs, dict);
    let mut per_answer: BTreeMap<String, usize> = dict.entities().iter().map(|e| (e.clone(), 0)).collect();
    for p in &passages {
        *per_answer.entry(p.answer_id.clone()).or_default() += 1;
    }
    let manifest = IngestManifest {
        documents: docs.len(),
        passages: passages.len(),
        answers: dict.entities().iter().cloned().collect(),
        passages_per_answer: per_answer,
        split_documents: splits.counts().into_iter().map(|(s, n)| (s.name().to_string(), n)).collect(),
    };
    Ok(IngestOutput {
        passages,
        splits,
        manifest,
    })
}

impl IngestOutput {
    pub fn write(&self, layout: &ArtifactLayout) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&layout.root)?;
        let mut f = BufWriter::new(std::fs::File::create(layout.corpus())?);
        write_masked_corpus(&mut f, &self.passages)?;
        drop(f);
        write_json(&layout.splits(), &self.splits)?;
        write_json(&layout.manifest(), &self.manifest)
    }

    pub fn load(layout: &ArtifactLayout) -> Result<Self, PipelineError> {
        for p in [layout.corpus(), layout.splits(), layout.manifest()] {
            layout.require(&p, "ingest")?;
        }
        let passages = read_masked_corpus(BufReader::new(std::fs::File::open(layout.corpus())?))?;
        Ok(Self {
            passages,
            splits: read_json(&layout.splits())?,
            manifest: read_json(&layout.manifest())?,
        })
    }

    pub fn answers(&self) -> AnswerSet {
        AnswerSet::new(self.manifest.answers.iter().cloned())
    }

    /// Passages whose document is in one of `splits`, in corpus order.
    pub fn passages_in(&self, splits: &[Split]) -> Vec<MaskedPassage> {
        self.passages
            .iter()
            .filter(|p| self.splits.split_of(&p.doc_id).is_some_and(|s| splits.contains(&s)))
            .cloned()
            .collect()
    }
}

/// Passages per answer in `passages`, with zero for answers that never occur.
pub fn answer_counts(passages: &[MaskedPassage], answers: &AnswerSet) -> BTreeMap<String, u64> {
    let mut counts: BTreeMap<String, u64> = answers.ids().iter().map(|a| (a.clone(), 0)).collect();
    for p in passages {
        if let Some(c) = counts.get_mut(&p.answer_id) {
            *c += 1;
        }
    }
    counts
}

pub struct RetrieverOutput {
    pub model: MlmModel<f64>,
    pub report: MlmTrainReport,
    /// Training-split passages per answer: the bias-correction counts.
    pub counts: BTreeMap<String, u64>,
    pub skipped: Vec<String>,
}

/// Builds the vocabulary from S1 and trains the MLM on S1, validating on S2.
pub fn train_retriever(
    corpus: &IngestOutput,
    encoder: &EncoderConfig,
    train: &MlmTrainConfig,
    seed: u64,
) -> Result<RetrieverOutput, PipelineError> {
    let s1 = corpus.passages_in(&[Split::S1]);
    let s2 = corpus.passages_in(&[Split::S2]);
    if s1.is_empty() {
        return Err(PipelineError::Data("no S1 passages to train on".into()));
    }
    let vocab = Vocab::build(s1.iter().map(|p| p.masked_text.as_str()), 1);
    let answers = corpus.answers();
    let mut model = MlmModel::<f64>::init(encoder.clone(), vocab, answers.clone(), seed)?;
    let (train_ex, mut skipped) = MlmExample::from_passages(&model, &s1)?;
    let (val_ex, skipped_val) = MlmExample::from_passages(&model, &s2)?;
    skipped.extend(skipped_val);
    let report = train_mlm(&mut model, &train_ex, &val_ex, train)?;
    Ok(RetrieverOutput {
        model,
        report,
        counts: answer_counts(&s1, &answers),
        skipped,
    })
}

/// Embeds `passages` with the frozen encoder and indexes them by answer.
pub fn build_index<T: Scalar>(model: &MlmModel<T>, passages: &[MaskedPassage]) -> Result<AnswerPartitionIndex, PipelineError> {
    let embedded = embed_corpus(model, passages)?;
    let by_id: BTreeMap<&str, &MaskedPassage> = passages.iter().map(|p| (p.passage_id.as_str(), p)).collect();
    let entries = embedded
        .passages
        .into_iter()
        .map(|e| {
            let p = by_id[e.passage_id.as_str()];
            IndexEntry {
                answer_id: e.answer_id,
                passage: PassageRef {
                    passage_id: p.passage_id.clone(),
                    doc_id: p.doc_id.clone(),
                    year: p.year,
                    source: p.source.clone(),
                },
                vector: e.vector,
            }
        })
        .collect();
    Ok(AnswerPartitionIndex::build(model.hidden(), entries)?)
}

/// Query passages for reasoner training, embedded with the frozen encoder.
pub fn query_passages<T: Scalar>(model: &MlmModel<T>, passages: &[MaskedPassage]) -> Result<Vec<QueryPassage>, PipelineError> {
    let embedded = embed_corpus(model, passages)?;
    let docs: BTreeMap<&str, &str> = passages.iter().map(|p| (p.passage_id.as_str(), p.doc_id.as_str())).collect();
    Ok(embedded
        .passages
        .into_iter()
        .map(|e| QueryPassage {
            doc_id: docs[e.passage_id.as_str()].to_string(),
            passage_id: e.passage_id,
            answer_id: e.answer_id,
            embedding: e.vector.iter().map(|v| v.as_f64()).collect(),
        })
        .collect())
}

pub struct ReasonerOutput {
    pub model: Reasoner<f64>,
    pub report: ReasonerTrainReport,
}

/// Trains the reasoner on S2 queries with evidence retrieved from an S1-only
/// index, so query and evidence documents never overlap.
pub fn train_reasoner_stage(
    corpus: &IngestOutput,
    retriever: &MlmModel<f64>,
    config: &ReasonerConfig,
    train: &ReasonerTrainConfig,
    seed: u64,
) -> Result<ReasonerOutput, PipelineError> {
    if config.hidden != retriever.hidden() {
        return Err(PipelineError::Config(format!(
            "reasoner width {} differs from encoder width {}",
            config.hidden,
            retriever.hidden()
        )));
    }
    let evidence = build_index(retriever, &corpus.passages_in(&[Split::S1]))?;
    let queries = query_passages(retriever, &corpus.passages_in(&[Split::S2]))?;
    let mut model = Reasoner::<f64>::init(config.clone(), seed)?;
    let report = train_reasoner(&mut model, &queries, corpus.answers().ids(), &evidence, train)?;
    Ok(ReasonerOutput { model, report })
}

/// Document ids in S3, the held-out split.
pub fn held_out_docs(splits: &CorpusSplits) -> BTreeSet<String> {
    splits.docs_in(Split::S3).map(str::to_string).collect()
}

impl RetrieverOutput {
    /// Writes the encoder, the bias counts and the training report.
    pub fn write(&self, layout: &ArtifactLayout) -> Result<(), PipelineError> {
        self.model.save(&layout.encoder(), DType::F64)?;
        write_json(&layout.answer_counts(), &self.counts)?;
        write_json(&layout.report("train-retriever"), &self.report)
    }
}

/// The trained encoder and the bias counts written by `train-retriever`.
pub fn load_retriever(layout: &ArtifactLayout) -> Result<(MlmModel<f64>, BTreeMap<String, u64>), PipelineError> {
    layout.require(&layout.encoder(), "train-retriever")?;
    layout.require(&layout.answer_counts(), "train-retriever")?;
    Ok((MlmModel::load(&layout.encoder())?, read_json(&layout.answer_counts())?))
}

impl ReasonerOutput {
    pub fn write(&self, layout: &ArtifactLayout) -> Result<(), PipelineError> {
        self.model.save(&layout.reasoner(), DType::F64)?;
        write_json(&layout.report("train-reasoner"), &self.report)
    }
}

pub fn write_index(layout: &ArtifactLayout, index: &AnswerPartitionIndex) -> Result<(), PipelineError> {
    std::fs::create_dir_all(&layout.root)?;
    let mut f = BufWriter::new(std::fs::File::create(layout.index())?);
    index.write(&mut f)?;
    Ok(())
}

/// The serving index covers every split except the held-out S3.
pub const INDEXED_SPLITS: [Split; 2] = [Split::S1, Split::S2];
