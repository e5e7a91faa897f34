use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::stages::{
    build_index, ingest, train_reasoner_stage, train_retriever, write_index, ArtifactLayout, IngestOutput,
    ReasonerOutput, RetrieverOutput, INDEXED_SPLITS,
};
use super::{PipelineError, R2eConfig, R2eSystem};
use crate::corpus::{EntityDictionary, MaskedPassage, RawDocument, Split, SplitPolicy};
use crate::diffkernel::AdamWConfig;
use crate::encoder::{EncoderConfig, MlmTrainConfig};
use crate::eval::SynthWorldConfig;
use crate::index::AnswerPartitionIndex;
use crate::reasoner::{ReasonerConfig, ReasonerTrainConfig};

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub retriever_secs: f64,
    pub reasoner_secs: f64,
    pub index_secs: f64,
}

impl StageTimings {
    pub fn training_secs(&self) -> f64 {
        self.retriever_secs + self.reasoner_secs
    }
}

/// Every stage's output from one in-memory run.
pub struct TrainedPipeline {
    pub corpus: IngestOutput,
    pub retriever: RetrieverOutput,
    pub reasoner: ReasonerOutput,
    pub index: AnswerPartitionIndex,
    pub timings: StageTimings,
}

/// Ingest, retriever training, reasoner training and indexing in one call.
pub fn run_pipeline(
    docs: &[RawDocument],
    dict: &EntityDictionary,
    cfg: &R2eConfig,
) -> Result<TrainedPipeline, PipelineError> {
    cfg.validate()?;
    let corpus = ingest(docs, dict, &cfg.splits)?;
    let t = Instant::now();
    let retriever = train_retriever(&corpus, &cfg.encoder, &cfg.mlm_train, cfg.seed)?;
    let retriever_secs = t.elapsed().as_secs_f64();
    log::info!("retriever trained in {retriever_secs:.1}s");
    let t = Instant::now();
    let reasoner = train_reasoner_stage(&corpus, &retriever.model, &cfg.reasoner, &cfg.reasoner_train, cfg.seed + 1)?;
    let reasoner_secs = t.elapsed().as_secs_f64();
    log::info!("reasoner trained in {reasoner_secs:.1}s");
    let t = Instant::now();
    let index = build_index(&retriever.model, &corpus.passages_in(&INDEXED_SPLITS))?;
    let index_secs = t.elapsed().as_secs_f64();
    Ok(TrainedPipeline {
        corpus,
        retriever,
        reasoner,
        index,
        timings: StageTimings {
            retriever_secs,
            reasoner_secs,
            index_secs,
        },
    })
}

impl TrainedPipeline {
    /// Writes the artifacts every stage would have written.
    pub fn write(&self, layout: &ArtifactLayout) -> Result<(), PipelineError> {
        self.corpus.write(layout)?;
        self.retriever.write(layout)?;
        self.reasoner.write(layout)?;
        write_index(layout, &self.index)
    }

    pub fn system(&self) -> Result<R2eSystem<f64>, PipelineError> {
        let texts: HashMap<String, String> = self
            .corpus
            .passages_in(&INDEXED_SPLITS)
            .into_iter()
            .map(|p| (p.passage_id, p.masked_text))
            .collect();
        R2eSystem::new(
            self.retriever.model.clone(),
            self.reasoner.model.clone(),
            self.index.clone(),
            self.retriever.counts.clone(),
            texts,
            self.corpus.manifest.split_documents.clone(),
        )
    }

    /// Held-out (S3) passages: the evaluation queries.
    pub fn held_out(&self) -> Vec<MaskedPassage> {
        self.corpus.passages_in(&[Split::S3])
    }
}

impl R2eConfig {
    /// Small models sized for synthetic worlds: trains in a few minutes on
    /// one core.
    pub fn synth_desk(world: &SynthWorldConfig, seed: u64) -> Self {
        let hidden = 16;
        let k = 16;
        let held_out = (world.sentences / 10).max(1);
        Self {
            seed,
            splits: SplitPolicy::Random {
                s2_docs: world.sentences * 3 / 10,
                s3_docs: held_out,
                seed: seed + 2,
            },
            encoder: EncoderConfig {
                layers: 1,
                heads: 2,
                hidden,
                intermediate: 2 * hidden,
                max_len: 16,
                ..EncoderConfig::default()
            },
            mlm_train: MlmTrainConfig {
                epochs: 10,
                batch_size: 32,
                optimizer: AdamWConfig {
                    learning_rate: 3e-3,
                    ..AdamWConfig::default()
                },
                seed: seed + 3,
                frozen_prefixes: Vec::new(),
            },
            reasoner: ReasonerConfig {
                hidden,
                k,
                heads: 2,
                inducing_points: 4,
                encoder_blocks: 1,
                decoder_blocks: 1,
                ..ReasonerConfig::default()
            },
            reasoner_train: ReasonerTrainConfig {
                epochs: 20,
                batch_size: 32,
                optimizer: AdamWConfig {
                    learning_rate: 3e-3,
                    weight_decay: 0.001,
                    ..AdamWConfig::default()
                },
                seed: seed + 5,
                ..ReasonerTrainConfig::default()
            },
            inference: super::InferenceConfig {
                k,
                ..Default::default()
            },
            ..Self::default()
        }
    }
}
