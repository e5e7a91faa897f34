use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EncoderError, MlmModel};
use crate::corpus::{MaskedPassage, TokenSequence};
use crate::diffkernel::{backward, AdamW, AdamWConfig, ParameterSet, Tape};

/// A tokenised passage and the index of its answer in the model's answer set.
#[derive(Debug, Clone)]
pub struct MlmExample {
    pub tokens: TokenSequence,
    pub answer: usize,
}

impl MlmExample {
    /// Tokenises passages against `model`. Passages whose mask was cut off by
    /// truncation are returned separately by id.
    pub fn from_passages<T: crate::Scalar>(
        model: &MlmModel<T>,
        passages: &[MaskedPassage],
    ) -> Result<(Vec<Self>, Vec<String>), EncoderError> {
        let mut out = Vec::with_capacity(passages.len());
        let mut skipped = Vec::new();
        for p in passages {
            let answer = model
                .answers
                .position(&p.answer_id)
                .ok_or_else(|| EncoderError::UnknownAnswer(p.answer_id.clone()))?;
            let tokens = model.tokenize(&p.masked_text);
            if tokens.mask_positions.is_empty() {
                skipped.push(p.passage_id.clone());
                continue;
            }
            out.push(Self { tokens, answer });
        }
        Ok((out, skipped))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Parameters whose name starts with any of these prefixes are not
    /// updated.
    #[serde(default)]
    pub frozen_prefixes: Vec<String>,
}

impl Default for MlmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            seed: 0,
            frozen_prefixes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmTrainReport {
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochStats>,
    pub updates: usize,
}

fn example_grad(
    model: &MlmModel<f64>,
    ex: &MlmExample,
) -> Result<(f64, ParameterSet<f64>), EncoderError> {
    let graph = |t: &mut Tape<'_, f64>| {
        let e = model.encode_on(t, &ex.tokens, false).map_err(kernel_of)?;
        let z = model.logits_on(t, e).map_err(kernel_of)?;
        t.cross_entropy(z, ex.answer)
    };
    Ok(backward(&graph, &model.params)?)
}

// Tape closures must return kernel errors; encoder-level failures are
// validated before training starts, so this only forwards kernel errors.
fn kernel_of(e: EncoderError) -> crate::diffkernel::KernelError {
    match e {
        EncoderError::Kernel(k) => k,
        other => crate::diffkernel::KernelError::Checkpoint(other.to_string()),
    }
}

/// Mean cross-entropy of the model over `examples`.
pub fn mean_loss(model: &MlmModel<f64>, examples: &[MlmExample]) -> Result<f64, EncoderError> {
    if examples.is_empty() {
        return Err(EncoderError::EmptyCorpus);
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new(&model.params);
            let e = model.encode_on(&mut tape, &ex.tokens, false)?;
            let z = model.logits_on(&mut tape, e)?;
            let l = tape.cross_entropy(z, ex.answer)?;
            Ok(tape.value(l).data()[0])
        })
        .collect::<Result<_, EncoderError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains encoder and answer table with softmax cross-entropy over the answer
/// set. Batches are reshuffled every epoch from `seed`; per-example gradients
/// are computed in parallel and reduced in batch order, so results do not
/// depend on the thread count.
pub fn train_mlm(
    model: &mut MlmModel<f64>,
    train: &[MlmExample],
    validation: &[MlmExample],
    cfg: &MlmTrainConfig,
) -> Result<MlmTrainReport, EncoderError> {
    if train.is_empty() {
        return Err(EncoderError::EmptyCorpus);
    }
    let n_answers = model.answers.len();
    if let Some(bad) = train.iter().chain(validation).find(|e| e.answer >= n_answers) {
        return Err(EncoderError::UnknownAnswer(format!("index {}", bad.answer)));
    }
    if let Some(bad) = train.iter().chain(validation).find(|e| e.tokens.mask_positions.is_empty()) {
        return Err(EncoderError::NoMask(bad.tokens.ids.len()));
    }
    let batch = cfg.batch_size.max(1);
    let mut opt = AdamW::new(cfg.optimizer, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let val = |m: &MlmModel<f64>| -> Result<Option<f64>, EncoderError> {
        if validation.is_empty() {
            Ok(None)
        } else {
            mean_loss(m, validation).map(Some)
        }
    };
    let mut report = MlmTrainReport {
        initial_val_loss: val(model)?,
        epochs: Vec::with_capacity(cfg.epochs),
        updates: 0,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let results: Vec<(f64, ParameterSet<f64>)> = chunk
                .par_iter()
                .map(|&i| example_grad(model, &train[i]))
                .collect::<Result<_, _>>()?;
            let mut grads = model.params.zeros_like();
            for (loss, g) in &results {
                total += loss;
                grads.accumulate(g)?;
            }
            grads.scale(1.0 / chunk.len() as f64);
            step_with_frozen(model, &mut opt, &grads, &cfg.frozen_prefixes)?;
            report.updates += 1;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: total / train.len() as f64,
            val_loss: val(model)?,
        };
        log::info!(
            "mlm epoch {}: train {:.4} val {}",
            stats.epoch,
            stats.train_loss,
            stats.val_loss.map_or("-".into(), |v| format!("{v:.4}"))
        );
        report.epochs.push(stats);
    }
    Ok(report)
}

pub(crate) fn step_with_frozen<M>(
    model: &mut M,
    opt: &mut AdamW<f64>,
    grads: &ParameterSet<f64>,
    frozen: &[String],
) -> Result<(), EncoderError>
where
    M: HasParams,
{
    let params = model.params_mut();
    let kept: Vec<(String, crate::diffkernel::Tensor<f64>)> = params
        .iter()
        .filter(|(n, _)| frozen.iter().any(|f| n.starts_with(f.as_str())))
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    opt.step(params, grads)?;
    for (n, t) in kept {
        params.set(&n, t)?;
    }
    Ok(())
}

pub(crate) trait HasParams {
    fn params_mut(&mut self) -> &mut ParameterSet<f64>;
}

impl HasParams for MlmModel<f64> {
    fn params_mut(&mut self) -> &mut ParameterSet<f64> {
        &mut self.params
    }
}
