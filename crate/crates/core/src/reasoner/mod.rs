//! Evidence reasoner: fuses the query with each retrieved evidence
//! embedding, combines the `k` fused features with a set transformer and
//! outputs `p(L = 1 | answer, query)`.

mod bias;
mod model;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bias::{bias_correction, BiasError, BiasModel};
pub use model::{FeatureSet, PairFeature, Provenance};
pub use train::{
    apply_evidence_dropout, check_disjoint, features_from_rows, sample_negatives, train_reasoner, QueryPassage,
    ReasonerEpoch, ReasonerTrainConfig, ReasonerTrainReport, TrainingExample,
};

use crate::diffkernel::{layers, read_checkpoint, write_checkpoint, Init, KernelError, ParameterSet};
use crate::scalar::{DType, Scalar};

pub const NULL_EMBEDDING: &str = "reasoner.null";

#[derive(Debug, thiserror::Error)]
pub enum ReasonerError {
    #[error("width mismatch: expected {expected}, got {got}")]
    Width { expected: usize, got: usize },
    #[error("expected {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("evidence index {index} out of range for {len} features")]
    MaskIndex { index: usize, len: usize },
    #[error("query documents overlap the evidence corpus (e.g. `{0}`)")]
    QueryEvidenceOverlap(String),
    #[error("answer set needs at least two answers")]
    SingletonAnswerSet,
    #[error("no training queries")]
    EmptyQueries,
    #[error("invalid reasoner config: {0}")]
    Config(String),
    #[error("bad artifact: {0}")]
    Format(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a query and one evidence embedding are fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairVariant {
    /// Layer-normalise the stacked `[2, h]` pair, then two width-1
    /// convolutions across the pair axis (2 → 8 → 1 channels).
    Conv,
    /// Element-wise product of the unit-norm query with the evidence row.
    Hadamard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    pub hidden: usize,
    /// Evidence slots per answer.
    pub k: usize,
    pub heads: usize,
    pub inducing_points: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub pair_channels: usize,
    pub pair_variant: PairVariant,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            k: 64,
            heads: 4,
            inducing_points: 32,
            encoder_blocks: 2,
            decoder_blocks: 2,
            pair_channels: 8,
            pair_variant: PairVariant::Conv,
        }
    }
}

impl ReasonerConfig {
    pub fn validate(&self) -> Result<(), ReasonerError> {
        let bad = |m: &str| Err(ReasonerError::Config(m.to_string()));
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad("hidden width must be a positive multiple of heads");
        }
        if self.k == 0 || self.inducing_points == 0 || self.pair_channels == 0 {
            return bad("k, inducing points and pair channels must be positive");
        }
        Ok(())
    }
}

/// Reasoner weights. Answer-agnostic: an answer is only seen through the
/// evidence retrieved from its partition.
#[derive(Debug, Clone)]
pub struct Reasoner<T: Scalar> {
    pub config: ReasonerConfig,
    pub params: ParameterSet<T>,
}

const MANIFEST_FILE: &str = "reasoner.json";
const WEIGHTS_FILE: &str = "reasoner.ckpt";

fn add_mab<R: rand::Rng>(p: &mut ParameterSet<f64>, prefix: &str, h: usize, rng: &mut R) -> Result<(), KernelError> {
    layers::add_attention(p, &format!("{prefix}.attn"), h, rng)?;
    layers::add_layer_norm(p, &format!("{prefix}.ln0"), h, rng)?;
    layers::add_feed_forward(p, &format!("{prefix}.rff"), h, h, rng)?;
    layers::add_layer_norm(p, &format!("{prefix}.ln1"), h, rng)
}

/// The set combiner is small and deep; with the fixed 0.02 weight std its
/// output barely depends on the input at initialisation. Matrices are
/// rescaled to std `1/sqrt(fan_in)`, learned set vectors (inducing points,
/// PMA seed, NULL) to unit std.
fn rescale_to_fan_in(p: &mut ParameterSet<f64>) {
    let names: Vec<String> = p.names().map(str::to_string).collect();
    for name in names {
        let Some(Init::Normal { std }) = p.init_of(&name) else {
            continue;
        };
        let t = p.get_mut(&name).expect("name from the set");
        let fan_in = match t.shape() {
            [fan_in, _] if name.ends_with(".w") && !name.starts_with("pair.conv") => *fan_in,
            [_, fan_in] if name.starts_with("pair.conv") => *fan_in,
            _ => 1,
        };
        let target = 1.0 / (fan_in as f64).sqrt();
        for v in t.data_mut() {
            *v *= target / std;
        }
    }
}

impl<T: Scalar> Reasoner<T> {
    pub fn init(config: ReasonerConfig, seed: u64) -> Result<Self, ReasonerError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let mut p = ParameterSet::<f64>::new();
        if config.pair_variant == PairVariant::Conv {
            layers::add_layer_norm(&mut p, "pair.ln", 2 * h, &mut rng)?;
            p.add("pair.conv1.w", &[config.pair_channels, 2], Init::WEIGHT, &mut rng)?;
            p.add("pair.conv1.b", &[config.pair_channels], Init::Zeros, &mut rng)?;
            p.add("pair.conv2.w", &[1, config.pair_channels], Init::WEIGHT, &mut rng)?;
            p.add("pair.conv2.b", &[1], Init::Zeros, &mut rng)?;
        }
        p.add(NULL_EMBEDDING, &[h], Init::WEIGHT, &mut rng)?;
        for b in 0..config.encoder_blocks {
            p.add(format!("set.isab{b}.inducing"), &[config.inducing_points, h], Init::WEIGHT, &mut rng)?;
            add_mab(&mut p, &format!("set.isab{b}.mab0"), h, &mut rng)?;
            add_mab(&mut p, &format!("set.isab{b}.mab1"), h, &mut rng)?;
        }
        p.add("set.pma.seed", &[1, h], Init::WEIGHT, &mut rng)?;
        layers::add_feed_forward(&mut p, "set.pma.rff", h, h, &mut rng)?;
        add_mab(&mut p, "set.pma.mab", h, &mut rng)?;
        for b in 0..config.decoder_blocks {
            add_mab(&mut p, &format!("set.sab{b}"), h, &mut rng)?;
        }
        layers::add_linear(&mut p, "set.out", h, 1, &mut rng)?;
        rescale_to_fan_in(&mut p);
        Ok(Self {
            config,
            params: p.cast(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Reasoner<U> {
        Reasoner {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn save(&self, dir: &Path, dtype: DType) -> Result<(), ReasonerError> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.config).map_err(|e| ReasonerError::Format(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), json)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(WEIGHTS_FILE))?);
        write_checkpoint(&mut f, &self.params, dtype)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ReasonerError> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let config: ReasonerConfig = serde_json::from_str(&text).map_err(|e| ReasonerError::Format(e.to_string()))?;
        config.validate()?;
        let mut f = std::io::BufReader::new(std::fs::File::open(dir.join(WEIGHTS_FILE))?);
        let params: ParameterSet<T> = read_checkpoint(&mut f)?;
        let null = params.get(NULL_EMBEDDING)?;
        if null.len() != config.hidden {
            return Err(ReasonerError::Format("NULL embedding width disagrees with config".into()));
        }
        Ok(Self { config, params })
    }
}
