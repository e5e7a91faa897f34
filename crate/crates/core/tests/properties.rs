//! Property tests against independent oracles: retrieval, Shapley values,
//! bias correction, metrics, the synthetic posterior and config files.

mod support;

use proptest::prelude::*;
use r2e_core::attribution::{shapley_exact, shapley_permutation, FnCoalition, OutputSpace, PermutationPlan};
use r2e_core::eval::{auroc, metrics_from_ranks, Aggregation, SynthWorld, SynthWorldConfig};
use r2e_core::index::{AnswerPartitionIndex, IndexEntry, MetadataFilter};
use r2e_core::pipeline::R2eConfig;
use r2e_core::reasoner::bias_correction;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn nonzero_vector(h: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, h).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topk_matches_filtered_brute_force(
        rows in prop::collection::vec(nonzero_vector(4), 1..40),
        query in nonzero_vector(4),
        k in 1usize..12,
        max_year in prop::option::of(2000u32..2020),
    ) {
        let entries: Vec<IndexEntry<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, v)| IndexEntry {
                answer_id: "A".into(),
                passage: support::passage(i),
                vector: v.clone(),
            })
            .collect();
        let index = AnswerPartitionIndex::build(4, entries).unwrap();
        let filter = MetadataFilter { max_year, sources: None };
        let hits = index.topk("A", &query, k, Some(&filter)).unwrap();
        let mut oracle: Vec<f64> = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| max_year.is_none_or(|m| support::passage(*i).year.is_some_and(|y| y <= m)))
            .map(|(_, v)| cosine(v, &query))
            .collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        oracle.truncate(k);
        prop_assert_eq!(hits.len(), oracle.len());
        for (h, o) in hits.iter().zip(&oracle) {
            prop_assert!((h.similarity - o).abs() < 1e-5, "{} vs {}", h.similarity, o);
            prop_assert!(filter.admits(&h.passage));
        }
        prop_assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn index_bytes_round_trip(rows in prop::collection::vec(nonzero_vector(3), 1..20)) {
        let entries: Vec<IndexEntry<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, v)| IndexEntry {
                answer_id: format!("A{}", i % 3),
                passage: support::passage(i),
                vector: v.clone(),
            })
            .collect();
        let index = AnswerPartitionIndex::build(3, entries).unwrap();
        let bytes = index.to_bytes();
        let back = AnswerPartitionIndex::read(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back.checksum(), index.checksum());
        prop_assert_eq!(back.counts(), index.counts());
    }

    #[test]
    fn additive_games_have_exact_shapley_values(
        weights in prop::collection::vec(-2.0f64..2.0, 1..9),
        offset in -1.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let k = weights.len();
        let w = weights.clone();
        let game = FnCoalition {
            k,
            f: move |present: &[bool]| offset + present.iter().zip(&w).filter(|(p, _)| **p).map(|(_, x)| x).sum::<f64>(),
        };
        let exact = shapley_exact(&game, OutputSpace::Logit).unwrap();
        let sampled = shapley_permutation(&game, &PermutationPlan::new(k, 3, seed), OutputSpace::Logit).unwrap();
        for i in 0..k {
            prop_assert!((exact.phi[i] - weights[i]).abs() < 1e-12);
            prop_assert!((sampled.phi[i] - weights[i]).abs() < 1e-12);
        }
        prop_assert!((exact.baseline - offset).abs() < 1e-12);
    }

    #[test]
    fn arbitrary_games_are_efficient(values in prop::collection::vec(-5.0f64..5.0, 64), seed in any::<u64>()) {
        let v = values.clone();
        let game = FnCoalition {
            k: 6,
            f: move |present: &[bool]| {
                let mask: usize = present.iter().enumerate().filter(|(_, p)| **p).map(|(i, _)| 1 << i).sum();
                v[mask]
            },
        };
        let exact = shapley_exact(&game, OutputSpace::Logit).unwrap();
        let sampled = shapley_permutation(&game, &PermutationPlan::new(6, 5, seed), OutputSpace::Logit).unwrap();
        for r in [&exact, &sampled] {
            prop_assert!(r.efficiency_gap().abs() < 1e-9);
            prop_assert_eq!(r.baseline, values[0]);
            prop_assert_eq!(r.total, values[63]);
        }
    }

    #[test]
    fn bias_correction_matches_closed_form(
        counts in prop::collection::vec(1u64..10_000, 2..12),
        c in 0.0f64..=1.0,
    ) {
        let f = bias_correction(&counts, c).unwrap();
        let n = counts.len() as f64;
        // The tilted prior C^c / sum C^c is exp(-f_c) / |A|, so it sums to one.
        let total: f64 = f.iter().map(|x| (-x).exp() / n).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for i in 0..counts.len() {
            for j in 0..counts.len() {
                let expected = c * ((counts[j] as f64).ln() - (counts[i] as f64).ln());
                prop_assert!((f[i] - f[j] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn auroc_matches_pair_counting_and_symmetries(
        data in prop::collection::vec((-3i32..3, any::<bool>()), 2..60),
    ) {
        let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (si, li) in scores.iter().zip(&labels) {
            for (sj, lj) in scores.iter().zip(&labels) {
                if *li && !*lj {
                    pairs += 1.0;
                    wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((a - wins / pairs).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auroc(&flipped, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
        let squashed: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        prop_assert!((auroc(&squashed, &labels).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn ranking_metrics_bounds_and_oracle(ranks in prop::collection::vec((0usize..3, 1usize..300), 1..50)) {
        let pairs: Vec<(String, usize)> = ranks.iter().map(|(a, r)| (format!("a{a}"), *r)).collect();
        let m = metrics_from_ranks(&pairs, &[1, 10, 200], Aggregation::Micro).unwrap();
        let n = pairs.len() as f64;
        let mrr: f64 = pairs.iter().map(|(_, r)| 1.0 / *r as f64).sum::<f64>() / n;
        let mr: f64 = pairs.iter().map(|(_, r)| *r as f64).sum::<f64>() / n;
        prop_assert!((m.mrr - mrr).abs() < 1e-12);
        prop_assert!((m.mr - mr).abs() < 1e-9);
        prop_assert!(m.hits[&1] <= m.hits[&10] && m.hits[&10] <= m.hits[&200]);
        prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        let single: Vec<(String, usize)> = pairs.iter().map(|(_, r)| ("x".to_string(), *r)).collect();
        let micro = metrics_from_ranks(&single, &[10], Aggregation::Micro).unwrap();
        let macro_ = metrics_from_ranks(&single, &[10], Aggregation::Macro).unwrap();
        prop_assert!((micro.mrr - macro_.mrr).abs() < 1e-12);
    }

    #[test]
    fn config_toml_round_trip(
        seed in any::<u32>(),
        k in 1usize..256,
        c in 0.0f64..=1.0,
        m in 1usize..500,
        ttl in 1u64..100_000,
    ) {
        let mut cfg = R2eConfig::default();
        cfg.seed = seed as u64;
        cfg.inference.k = k;
        cfg.inference.c = c;
        cfg.inference.permutations = m;
        cfg.server.session_ttl_secs = ttl;
        let back = R2eConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

/// Under the true posterior, the expected probability of the entity that
/// generated a sentence equals the expected sum of squared posteriors.
#[test]
fn synthetic_posterior_is_calibrated() {
    for (mixing, width) in [(0.5, 4.0), (0.3, 2.0), (0.8, 6.0)] {
        let world = SynthWorld::new(SynthWorldConfig {
            mixing,
            signature_width: width,
            ..SynthWorldConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 20_000;
        let (mut hit, mut self_sq) = (0.0, 0.0);
        for _ in 0..n {
            let s = world.sample_sentence(&mut rng);
            let p = world.posterior(&s.words);
            hit += p[s.entity];
            self_sq += p.iter().map(|x| x * x).sum::<f64>();
        }
        let (hit, self_sq) = (hit / n as f64, self_sq / n as f64);
        assert!((hit - self_sq).abs() < 0.01, "mixing {mixing}: {hit} vs {self_sq}");
    }
}
