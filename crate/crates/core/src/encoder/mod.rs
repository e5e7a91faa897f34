//! Masked-language-model encoder: baseline ranker and retriever.
//!
//! A small post-LN transformer encodes a tokenised passage; the mean of the
//! final hidden states at the mask positions is the passage embedding. An
//! answer table (one vector and one bias per answer) turns it into logits.

mod embed;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use embed::{
    embed_corpus, read_embeddings, write_embeddings, EmbeddedPassage, EmbeddingOutput, EMBEDDING_MAGIC,
};
pub use train::{train_mlm, EpochStats, MlmExample, MlmTrainConfig, MlmTrainReport};

use crate::answers::AnswerSet;
use crate::corpus::{TokenSequence, Vocab, SEQ_LEN};
use crate::diffkernel::{
    forward, layers, read_checkpoint, softmax_row, write_checkpoint, Init, KernelError, NodeId,
    ParameterSet, Tape, Tensor,
};
use crate::ranking::{RankBasis, RankedAnswerList};
use crate::scalar::{DType, Scalar};

pub const TOKEN_TABLE: &str = "enc.tok";
pub const POSITION_TABLE: &str = "enc.pos";
pub const ANSWER_TABLE: &str = "answers.emb";
pub const ANSWER_BIAS: &str = "answers.bias";

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("passage has no mask token within the first {0} tokens")]
    NoMask(usize),
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("answer `{0}` is not in the answer set")]
    UnknownAnswer(String),
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("bad artifact: {0}")]
    Format(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Encoder shape. Desk-scale defaults: 2 layers, 4 heads, width 32,
/// feed-forward width 64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 32,
            intermediate: 64,
            vocab_size: 0,
            max_len: SEQ_LEN,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(EncoderError::Config(format!(
                "hidden width {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size < 3 || self.max_len == 0 || self.intermediate == 0 {
            return Err(EncoderError::Config("vocab, length and intermediate width must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder weights plus the answer table, the vocabulary and the answer set
/// they were trained against.
#[derive(Debug, Clone)]
pub struct MlmModel<T: Scalar> {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub answers: AnswerSet,
    pub params: ParameterSet<T>,
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    config: EncoderConfig,
    vocab: Vec<String>,
    answers: AnswerSet,
}

const MANIFEST_FILE: &str = "encoder.json";
const WEIGHTS_FILE: &str = "encoder.ckpt";

impl<T: Scalar> MlmModel<T> {
    /// Fresh weights: normal(0, 0.02) matrices, zero biases, unit layer-norm
    /// gains.
    pub fn init(mut config: EncoderConfig, vocab: Vocab, answers: AnswerSet, seed: u64) -> Result<Self, EncoderError> {
        config.vocab_size = vocab.len();
        config.validate()?;
        if answers.is_empty() {
            return Err(EncoderError::Config("answer set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let mut p = ParameterSet::new();
        p.add(TOKEN_TABLE, &[config.vocab_size, h], Init::WEIGHT, &mut rng)?;
        p.add(POSITION_TABLE, &[config.max_len, h], Init::WEIGHT, &mut rng)?;
        layers::add_layer_norm(&mut p, "enc.emb_ln", h, &mut rng)?;
        for l in 0..config.layers {
            let pre = format!("enc.layer{l}");
            layers::add_attention(&mut p, &format!("{pre}.attn"), h, &mut rng)?;
            layers::add_layer_norm(&mut p, &format!("{pre}.ln1"), h, &mut rng)?;
            layers::add_feed_forward(&mut p, &format!("{pre}.ffn"), h, config.intermediate, &mut rng)?;
            layers::add_layer_norm(&mut p, &format!("{pre}.ln2"), h, &mut rng)?;
        }
        p.add(ANSWER_TABLE, &[answers.len(), h], Init::WEIGHT, &mut rng)?;
        p.add(ANSWER_BIAS, &[answers.len()], Init::Zeros, &mut rng)?;
        Ok(Self {
            config,
            vocab,
            answers,
            params: p,
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        crate::corpus::tokenize_with_len(text, &self.vocab, self.config.max_len)
    }

    pub fn cast<U: Scalar>(&self) -> MlmModel<U> {
        MlmModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            answers: self.answers.clone(),
            params: self.params.cast(),
        }
    }

    /// Records the encoder on `tape` and returns the `[1, h]` embedding node.
    ///
    /// With `padded` the full fixed-length sequence is run and padding keys
    /// are masked out of every attention softmax; otherwise only the valid
    /// prefix is computed. Both give the same embedding.
    pub fn encode_on(&self, tape: &mut Tape<'_, T>, tokens: &TokenSequence, padded: bool) -> Result<NodeId, EncoderError> {
        if tokens.mask_positions.is_empty() {
            return Err(EncoderError::NoMask(tokens.ids.len()));
        }
        let x = self.hidden_states_on(tape, tokens, padded)?;
        Ok(tape.mean_rows(x, &tokens.mask_positions)?)
    }

    /// Final-layer hidden states, one row per computed position.
    pub fn hidden_states_on(
        &self,
        tape: &mut Tape<'_, T>,
        tokens: &TokenSequence,
        padded: bool,
    ) -> Result<NodeId, EncoderError> {
        let len = if padded { tokens.ids.len() } else { tokens.valid_len };
        if len > self.config.max_len {
            return Err(EncoderError::WidthMismatch {
                expected: self.config.max_len,
                got: len,
            });
        }
        let key_valid: Option<Vec<bool>> = padded.then(|| (0..len).map(|i| i < tokens.valid_len).collect());
        let positions: Vec<usize> = (0..len).collect();
        let tok = tape.param(TOKEN_TABLE)?;
        let pos = tape.param(POSITION_TABLE)?;
        let te = tape.embedding(tok, &tokens.ids[..len])?;
        let pe = tape.embedding(pos, &positions)?;
        let x = tape.add(te, pe)?;
        let mut x = layers::layer_norm(tape, x, "enc.emb_ln")?;
        for l in 0..self.config.layers {
            let pre = format!("enc.layer{l}");
            let a = layers::multihead_attention(
                tape,
                &format!("{pre}.attn"),
                x,
                x,
                self.config.heads,
                key_valid.as_deref(),
            )?;
            let r = tape.add(x, a)?;
            x = layers::layer_norm(tape, r, &format!("{pre}.ln1"))?;
            let f = layers::feed_forward(tape, x, &format!("{pre}.ffn"))?;
            let r = tape.add(x, f)?;
            x = layers::layer_norm(tape, r, &format!("{pre}.ln2"))?;
        }
        Ok(x)
    }

    /// `[1, |A|]` answer logits from an embedding node.
    pub fn logits_on(&self, tape: &mut Tape<'_, T>, embedding: NodeId) -> Result<NodeId, EncoderError> {
        let table = tape.param(ANSWER_TABLE)?;
        let bias = tape.param(ANSWER_BIAS)?;
        let z = tape.matmul_nt(embedding, table)?;
        Ok(tape.add(z, bias)?)
    }

    /// Mean of the final hidden states at the mask positions.
    pub fn encode(&self, tokens: &TokenSequence) -> Result<Vec<T>, EncoderError> {
        self.encode_with(tokens, false)
    }

    pub fn encode_with(&self, tokens: &TokenSequence, padded: bool) -> Result<Vec<T>, EncoderError> {
        let mut tape = Tape::new(&self.params);
        let e = self.encode_on(&mut tape, tokens, padded)?;
        Ok(tape.value(e).data().to_vec())
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<T>, EncoderError> {
        self.encode(&self.tokenize(text))
    }

    /// `embedding · E_a + b_a` for every answer.
    pub fn answer_logits(&self, embedding: &[T]) -> Result<Vec<T>, EncoderError> {
        let h = self.hidden();
        if embedding.len() != h {
            return Err(EncoderError::WidthMismatch {
                expected: h,
                got: embedding.len(),
            });
        }
        let emb = Tensor::row(embedding.to_vec())?;
        let out = forward(
            &|t: &mut Tape<'_, T>| {
                let e = t.leaf(emb.clone())?;
                let table = t.param(ANSWER_TABLE)?;
                let bias = t.param(ANSWER_BIAS)?;
                let z = t.matmul_nt(e, table)?;
                t.add(z, bias)
            },
            &self.params,
        )?;
        Ok(out.into_data())
    }

    pub fn mlm_distribution(&self, embedding: &[T]) -> Result<Vec<T>, EncoderError> {
        let z = self.answer_logits(embedding)?;
        Ok(mlm_distribution(&z))
    }

    /// Answers by MLM probability, ties by answer id.
    pub fn rank_answers(&self, tokens: &TokenSequence) -> Result<RankedAnswerList, EncoderError> {
        let e = self.encode(tokens)?;
        let z = self.answer_logits(&e)?;
        let p = mlm_distribution(&z);
        let z: Vec<f64> = z.iter().map(|v| v.as_f64()).collect();
        let p: Vec<f64> = p.iter().map(|v| v.as_f64()).collect();
        Ok(RankedAnswerList::from_scores(&self.answers, &z, Some(&p), &[], RankBasis::Uncorrected))
    }

    pub fn save(&self, dir: &Path, dtype: DType) -> Result<(), EncoderError> {
        std::fs::create_dir_all(dir)?;
        let manifest = ModelManifest {
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            answers: self.answers.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| EncoderError::Format(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), json)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(WEIGHTS_FILE))?);
        write_checkpoint(&mut f, &self.params, dtype)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, EncoderError> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: ModelManifest = serde_json::from_str(&text).map_err(|e| EncoderError::Format(e.to_string()))?;
        let mut f = std::io::BufReader::new(std::fs::File::open(dir.join(WEIGHTS_FILE))?);
        let params = read_checkpoint(&mut f)?;
        let vocab = Vocab::from_tokens(m.vocab.into_iter().skip(3));
        let model = Self {
            config: m.config,
            vocab,
            answers: m.answers,
            params,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), EncoderError> {
        let h = self.hidden();
        let expect = |name: &str, shape: &[usize]| -> Result<(), EncoderError> {
            let got = self.params.get(name)?.shape();
            if got != shape {
                return Err(EncoderError::Format(format!("{name} has shape {got:?}, expected {shape:?}")));
            }
            Ok(())
        };
        expect(TOKEN_TABLE, &[self.vocab.len(), h])?;
        expect(ANSWER_TABLE, &[self.answers.len(), h])?;
        expect(ANSWER_BIAS, &[self.answers.len()])
    }
}

/// `softmax(z)`.
pub fn mlm_distribution<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    softmax_row(logits, None, &mut out);
    out
}
