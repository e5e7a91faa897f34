#![allow(dead_code)]

pub mod grad;

use r2e_core::index::PassageRef;
use r2e_core::reasoner::{FeatureSet, PairVariant, Provenance, Reasoner, ReasonerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn passage(i: usize) -> PassageRef {
    PassageRef {
        passage_id: format!("p{i:05}"),
        doc_id: format!("d{i:05}"),
        year: Some(2000 + (i % 20) as u32),
        source: "test".into(),
    }
}

/// A small reasoner with weights spread well beyond their initial scale.
pub fn random_reasoner(seed: u64, k: usize, variant: PairVariant) -> Reasoner<f64> {
    let cfg = ReasonerConfig {
        hidden: 4,
        k,
        heads: 2,
        inducing_points: 2,
        encoder_blocks: 1,
        decoder_blocks: 1,
        pair_variant: variant,
        ..Default::default()
    };
    let mut model = Reasoner::<f64>::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in model.params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    model
}

pub fn random_vector(rng: &mut ChaCha8Rng, h: usize) -> Vec<f64> {
    (0..h).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Features for a random query and `n` random evidence rows, padded with
/// NULL up to `k`.
pub fn random_features(model: &Reasoner<f64>, rng: &mut ChaCha8Rng, n: usize, k: usize) -> FeatureSet<f64> {
    let h = model.hidden();
    let query = random_vector(rng, h);
    let evidence: Vec<(Vec<f64>, Provenance)> = (0..n)
        .map(|i| {
            (
                random_vector(rng, h),
                Provenance::Evidence {
                    passage: passage(i),
                    similarity: 0.0,
                    row: i,
                },
            )
        })
        .collect();
    model.features_with_k(&query, &evidence, k).unwrap()
}
