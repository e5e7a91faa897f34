//! A small generative world whose answer posterior is known exactly.
//!
//! Each sentence mentions one entity `a`, drawn from a Zipf-like prior, and
//! `L` words drawn i.i.d. from `λ s_a + (1 − λ) n`, where `s_a` is the
//! entity's signature distribution over topic words and `n` is uniform over
//! the whole vocabulary. Given the words, `P(a | w) ∝ π_a Π_i p_a(w_i)`.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::{words, EntityDictionary, RawDocument, MASK_TOKEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWorldConfig {
    pub entities: usize,
    pub topic_words: usize,
    pub noise_words: usize,
    /// Width of each entity's signature bump on the ring of topic words.
    pub signature_width: f64,
    /// Give every entity its own block of topic words instead of
    /// overlapping bumps.
    pub disjoint: bool,
    /// Weight `λ` of the signature distribution.
    pub mixing: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub sentences: usize,
    pub zipf_exponent: f64,
    pub first_year: u32,
    pub years: u32,
}

impl Default for SynthWorldConfig {
    fn default() -> Self {
        Self {
            entities: 12,
            topic_words: 48,
            noise_words: 32,
            signature_width: 4.0,
            disjoint: false,
            mixing: 0.5,
            min_len: 4,
            max_len: 8,
            sentences: 10000,
            zipf_exponent: 1.5,
            first_year: 2000,
            years: 20,
        }
    }
}

impl SynthWorldConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Invalid(m.to_string()));
        if self.entities < 2 {
            return bad("need at least two entities");
        }
        if self.topic_words == 0 || self.min_len == 0 || self.min_len > self.max_len {
            return bad("topic words and sentence lengths must be positive and ordered");
        }
        if self.disjoint && self.topic_words < self.entities {
            return bad("disjoint signatures need at least one topic word per entity");
        }
        if !(0.0..=1.0).contains(&self.mixing) || !(self.signature_width > 0.0) {
            return bad("mixing must be in [0, 1] and signature width positive");
        }
        if self.sentences < self.entities || self.zipf_exponent < 0.0 || self.years == 0 {
            return bad("need at least one sentence per entity, a non-negative exponent and one year");
        }
        Ok(())
    }
}

/// The generative model: entity ids, prior and per-entity word
/// distributions over a shared vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWorld {
    pub config: SynthWorldConfig,
    pub entities: Vec<String>,
    /// Sentences per entity in a generated corpus; the prior is these
    /// counts normalised.
    pub counts: Vec<usize>,
    pub prior: Vec<f64>,
    pub vocab: Vec<String>,
    /// `p_a(w) = λ s_a(w) + (1 − λ) n(w)`, one row per entity.
    pub word_probs: Vec<Vec<f64>>,
}

/// Sentence counts proportional to `1 / rank^s`, rounded by largest
/// remainder so they sum to `total`, at least one each.
fn zipf_counts(n: usize, s: f64, total: usize) -> Vec<usize> {
    let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let z: f64 = w.iter().sum();
    let spare = total - n;
    let exact: Vec<f64> = w.iter().map(|x| x / z * spare as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = spare - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts.iter().map(|c| c + 1).collect()
}

/// One generated sentence with its entity and the masked form.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSentence {
    pub entity: usize,
    pub words: Vec<usize>,
    pub mask_position: usize,
}

/// A generated corpus: one sentence per document.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub documents: Vec<RawDocument>,
    pub dictionary: EntityDictionary,
    /// Document id → entity id.
    pub labels: BTreeMap<String, String>,
}

impl SynthWorld {
    pub fn new(config: SynthWorldConfig) -> Result<Self, EvalError> {
        config.validate()?;
        let a = config.entities;
        let t = config.topic_words;
        let v = t + config.noise_words;
        let entities: Vec<String> = (0..a).map(|i| format!("ENT{i:02}")).collect();
        let counts = zipf_counts(a, config.zipf_exponent, config.sentences);
        let total: usize = counts.iter().sum();
        let prior = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let mut vocab: Vec<String> = (0..t).map(|i| format!("t{i:03}")).collect();
        vocab.extend((0..config.noise_words).map(|i| format!("n{i:03}")));
        let noise = 1.0 / v as f64;
        let word_probs = (0..a)
            .map(|e| {
                let mut sig = vec![0.0; v];
                if config.disjoint {
                    let lo = e * t / a;
                    let hi = (e + 1) * t / a;
                    for s in &mut sig[lo..hi] {
                        *s = 1.0 / (hi - lo) as f64;
                    }
                } else {
                    let centre = e as f64 * t as f64 / a as f64;
                    for (w, s) in sig.iter_mut().enumerate().take(t) {
                        let d = (w as f64 - centre).abs();
                        let d = d.min(t as f64 - d);
                        *s = (-d * d / (2.0 * config.signature_width.powi(2))).exp();
                    }
                    let z: f64 = sig.iter().sum();
                    sig.iter_mut().for_each(|s| *s /= z);
                }
                sig.iter().map(|s| config.mixing * s + (1.0 - config.mixing) * noise).collect()
            })
            .collect();
        Ok(Self {
            config,
            entities,
            counts,
            prior,
            vocab,
            word_probs,
        })
    }

    pub fn word_index(&self, w: &str) -> Option<usize> {
        let (kind, num) = w.split_at(1);
        let i: usize = num.parse().ok()?;
        match kind {
            "t" if i < self.config.topic_words => Some(i),
            "n" if i < self.config.noise_words => Some(self.config.topic_words + i),
            _ => None,
        }
        .filter(|&i| self.vocab[i] == w)
    }

    /// Exact `P(a | words)` for every entity.
    pub fn posterior(&self, words: &[usize]) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.entities.len())
            .map(|a| self.prior[a].ln() + words.iter().map(|&w| self.word_probs[a][w].ln()).sum::<f64>())
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        logs.iter().map(|l| (l - max).exp() / z).collect()
    }

    /// Posterior for a masked sentence; words outside the vocabulary are
    /// ignored.
    pub fn posterior_for_text(&self, masked_text: &str) -> Vec<f64> {
        let ids: Vec<usize> = words(masked_text)
            .iter()
            .filter(|w| w.as_str() != MASK_TOKEN)
            .filter_map(|w| self.word_index(w))
            .collect();
        self.posterior(&ids)
    }

    fn words_for<R: Rng>(&self, entity: usize, rng: &mut R) -> SynthSentence {
        let dist = WeightedIndex::new(&self.word_probs[entity]).expect("word distribution is valid");
        let len = rng.random_range(self.config.min_len..=self.config.max_len);
        let words: Vec<usize> = (0..len).map(|_| dist.sample(rng)).collect();
        let mask_position = rng.random_range(0..=len);
        SynthSentence {
            entity,
            words,
            mask_position,
        }
    }

    /// One sentence with its entity drawn from the prior.
    pub fn sample_sentence<R: Rng>(&self, rng: &mut R) -> SynthSentence {
        let prior = WeightedIndex::new(&self.prior).expect("prior is valid");
        let entity = prior.sample(rng);
        self.words_for(entity, rng)
    }

    /// `per_entity` masked query sentences for every entity, entity-major.
    /// Balanced sets like this remove the frequency prior as a shortcut.
    pub fn stratified_queries(&self, per_entity: usize, seed: u64) -> Vec<(String, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.entities.len())
            .flat_map(|a| std::iter::repeat_n(a, per_entity))
            .map(|a| {
                let s = self.words_for(a, &mut rng);
                (self.render(&s, true), self.entities[a].clone())
            })
            .collect()
    }

    pub fn render(&self, s: &SynthSentence, masked: bool) -> String {
        let mut toks: Vec<&str> = s.words.iter().map(|&w| self.vocab[w].as_str()).collect();
        let ent = if masked { MASK_TOKEN } else { self.entities[s.entity].as_str() };
        toks.insert(s.mask_position, ent);
        format!("{}.", toks.join(" "))
    }

    /// Exactly `counts[a]` sentences for each entity, in shuffled order, one
    /// per document.
    pub fn generate(&self, seed: u64) -> SynthCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = self
            .counts
            .iter()
            .enumerate()
            .flat_map(|(a, &c)| std::iter::repeat_n(a, c))
            .collect();
        order.shuffle(&mut rng);
        let mut documents = Vec::with_capacity(order.len());
        let mut labels = BTreeMap::new();
        for (i, &a) in order.iter().enumerate() {
            let s = self.words_for(a, &mut rng);
            let doc_id = format!("synth{i:06}");
            let year = self.config.first_year + (i as u32 % self.config.years);
            documents.push(RawDocument::new(doc_id.clone(), Some(year), vec![self.render(&s, false)]));
            labels.insert(doc_id, self.entities[a].clone());
        }
        let dictionary = EntityDictionary::from_pairs(self.entities.iter().map(|e| (e.clone(), e.clone())))
            .expect("entity names are valid surfaces");
        SynthCorpus {
            documents,
            dictionary,
            labels,
        }
    }
}
