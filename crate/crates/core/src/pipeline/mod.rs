//! Pipeline stages (ingest, retriever training, indexing, reasoner
//! training), the artifact layout that connects them, configuration, and
//! the loaded inference system.

mod config;
mod evaluate;
mod stages;
mod system;
mod workflow;

use std::path::PathBuf;

pub use evaluate::{evaluate, EvaluateOptions, EvaluationReport, MethodReport, METHODS};
pub use config::{InferenceConfig, PathsConfig, R2eConfig, ServerConfig, ENV_PREFIX};
pub use stages::{
    answer_counts, build_index, held_out_docs, ingest, load_retriever, query_passages, train_reasoner_stage,
    train_retriever, write_index, ArtifactLayout, IngestManifest, IngestOutput, ReasonerOutput, RetrieverOutput,
    INDEXED_SPLITS,
};
pub use system::{CorpusStats, ExplainOptions, R2eSystem, RankOptions, RankOutput};
pub use workflow::{run_pipeline, StageTimings, TrainedPipeline};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact {path:?}; run the `{stage}` stage first")]
    MissingArtifact { stage: &'static str, path: PathBuf },
    #[error("unknown answer `{0}`")]
    UnknownAnswer(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error(transparent)]
    Reasoner(#[from] crate::reasoner::ReasonerError),
    #[error(transparent)]
    Bias(#[from] crate::reasoner::BiasError),
    #[error(transparent)]
    Attribution(#[from] crate::attribution::AttributionError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Dependency,
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::MissingArtifact { .. } => ErrorClass::Dependency,
            PipelineError::Config(_) | PipelineError::Bias(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}
