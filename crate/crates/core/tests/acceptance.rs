//! Acceptance gate. Runs every primary criterion, prints one PASS/FAIL line
//! each, and exits non-zero if any fails.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use r2e_core::attribution::{shapley_exact, shapley_permutation, FnCoalition, OutputSpace, PermutationPlan, ReasonerCoalition};
use r2e_core::eval::{
    auroc, delong_variance, paired_bootstrap, relative_success, spearman,
    ContingencySummary, RelativeSuccess, SynthWorld, SynthWorldConfig,
};
use r2e_core::index::{AnswerPartitionIndex, IndexEntry, MetadataFilter};
use r2e_core::pipeline::{run_pipeline, R2eConfig, RankOptions};
use r2e_core::ranking::RankBasis;
use r2e_core::reasoner::{apply_evidence_dropout, bias_correction, FeatureSet, PairFeature, PairVariant, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::grad::{model_cases, primitive_cases, GRAD_TOL};
use support::{passage, random_features, random_reasoner, random_vector};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn shapley_efficiency() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000u64 {
        let k = 2 + (i % 7) as usize;
        let model = random_reasoner(i, k, PairVariant::Conv);
        let n = rng.random_range(1..=k);
        let features = random_features(&model, &mut rng, n, k);
        for space in [OutputSpace::Probability, OutputSpace::Logit] {
            let game = ReasonerCoalition {
                reasoner: &model,
                features: &features,
                space,
            };
            let exact = shapley_exact(&game, space).map_err(|e| e.to_string())?;
            let sampled =
                shapley_permutation(&game, &PermutationPlan::new(k, 10, i), space).map_err(|e| e.to_string())?;
            worst = worst.max(exact.efficiency_gap().abs()).max(sampled.efficiency_gap().abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-6, || format!("max |gap| {worst:.3e}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("1000 reasoners, k in 2..=8, max |gap| {worst:.2e}, {secs:.1}s"))
}

fn shapley_oracle_agreement() -> Outcome {
    let k = 8;
    let mut mae_sum = 0.0;
    let mut worst: f64 = 0.0;
    for t in 0..50u64 {
        let model = random_reasoner(100 + t, k, PairVariant::Conv);
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let features = random_features(&model, &mut rng, k, k);
        let game = ReasonerCoalition {
            reasoner: &model,
            features: &features,
            space: OutputSpace::Probability,
        };
        let exact = shapley_exact(&game, OutputSpace::Probability).map_err(|e| e.to_string())?;
        let est = shapley_permutation(&game, &PermutationPlan::new(k, 100, 7 + t), OutputSpace::Probability)
            .map_err(|e| e.to_string())?;
        let mae = est.phi.iter().zip(&exact.phi).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64;
        mae_sum += mae;
        worst = worst.max(mae);
    }
    let mae = mae_sum / 50.0;
    ensure(worst < 0.05, || format!("worst trial MAE {worst:.4}"))?;

    // Curved game: marginal gains grow with coalition size.
    let w: Vec<f64> = (0..k).map(|i| 0.2 + 0.1 * i as f64).collect();
    let curved = FnCoalition {
        k,
        f: |p: &[bool]| {
            let s: f64 = p.iter().zip(&w).filter(|(p, _)| **p).map(|(_, x)| x).sum();
            s * s * s
        },
    };
    let exact = shapley_exact(&curved, OutputSpace::Logit).map_err(|e| e.to_string())?;
    let sq_err = |plan: &PermutationPlan| -> Result<f64, String> {
        let est = shapley_permutation(&curved, plan, OutputSpace::Logit).map_err(|e| e.to_string())?;
        Ok(est.phi.iter().zip(&exact.phi).map(|(a, b)| (a - b).powi(2)).sum())
    };
    let (mut anti, mut plain) = (Vec::new(), Vec::new());
    for t in 0..300u64 {
        anti.push(sq_err(&PermutationPlan::new(k, 10, 1000 + t))?);
        plain.push(sq_err(&PermutationPlan::independent(k, 10, 5000 + t))?);
    }
    let test = paired_bootstrap(&plain, &anti, 1000, 9).map_err(|e| e.to_string())?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    ensure(test.p_value < 0.05 && mean(&anti) <= mean(&plain), || {
        format!(
            "antithetic {:.3e} vs plain {:.3e}, p = {:.3}",
            mean(&anti),
            mean(&plain),
            test.p_value
        )
    })?;
    Ok(format!(
        "mean MAE {mae:.4} (worst {worst:.4}); curved game error antithetic {:.2e} < plain {:.2e}, p = {:.4}",
        mean(&anti),
        mean(&plain),
        test.p_value
    ))
}

fn shapley_axioms() -> Outcome {
    let mut worst_null: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for t in 0..50u64 {
        let k = 3 + (t % 6) as usize;
        let model = random_reasoner(200 + t, k, PairVariant::Conv);
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let base = random_features(&model, &mut rng, k, k);
        let h = model.hidden();
        let null_vec: Vec<f64> = model.params.get("reasoner.null").unwrap().data().to_vec();
        let mut rows: Vec<PairFeature<f64>> = (0..k).map(|i| base.feature(i)).collect();
        // Slot 0 carries exactly the NULL embedding: a null player.
        rows[0].vector = Some(null_vec);
        // Slots 1 and 2 are identical: symmetric players.
        rows[2].vector = rows[1].vector.clone();
        let features = FeatureSet::from_features(h, rows).map_err(|e| e.to_string())?;
        for space in [OutputSpace::Logit, OutputSpace::Probability] {
            let game = ReasonerCoalition {
                reasoner: &model,
                features: &features,
                space,
            };
            let r = shapley_exact(&game, space).map_err(|e| e.to_string())?;
            worst_null = worst_null.max(r.phi[0].abs());
            worst_sym = worst_sym.max((r.phi[1] - r.phi[2]).abs());
        }
    }
    ensure(worst_null < 1e-9 && worst_sym < 1e-9, || {
        format!("null player {worst_null:.3e}, symmetry {worst_sym:.3e}")
    })?;
    Ok(format!("null player max |phi| {worst_null:.1e}, symmetry max gap {worst_sym:.1e}"))
}

fn permutation_invariance() -> Outcome {
    let k = 8;
    let model = random_reasoner(300, k, PairVariant::Conv);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let features = random_features(&model, &mut rng, 6, k);
    let reference = model.logit_masked(&features, &[]).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut order: Vec<usize> = (0..k).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let z = model.logit_masked(&features.permuted(&order), &[]).map_err(|e| e.to_string())?;
        worst = worst.max((z - reference).abs());
    }
    ensure(worst < 1e-9, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("1000 permutations, max deviation {worst:.1e}"))
}

fn gradient_checks() -> Outcome {
    let mut worst = (0.0, String::new());
    let cases: Vec<_> = primitive_cases().into_iter().chain(model_cases()).collect();
    let n = cases.len();
    for case in cases {
        let r = case.run();
        if r.max_rel_error >= worst.0 {
            worst = (r.max_rel_error, case.name.clone());
        }
    }
    ensure(worst.0 < GRAD_TOL, || format!("{} at rel err {:.3e}", worst.1, worst.0))?;
    Ok(format!("{n} cases, worst {} at {:.2e}", worst.1, worst.0))
}

fn brute_topk(index: &AnswerPartitionIndex, answer: &str, q: &[f64], k: usize, filter: Option<&MetadataFilter>) -> Vec<(String, f64)> {
    let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut all: Vec<(String, f64)> = (0..index.partition_len(answer))
        .filter(|&i| filter.is_none_or(|f| f.admits(index.passage(answer, i).unwrap())))
        .map(|i| {
            let row = index.row(answer, i).unwrap();
            let s: f64 = row.iter().zip(q).map(|(&r, &x)| r as f64 * (x / norm)).sum();
            (index.passage(answer, i).unwrap().passage_id.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn retrieval_exactness() -> Outcome {
    let mut checked = 0usize;
    for c in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(c);
        let h = rng.random_range(2..=12);
        let n = if c % 10 == 0 { rng.random_range(8192..=10_000) } else { rng.random_range(1..=2000) };
        let answers = rng.random_range(1..=4);
        let mut entries = Vec::with_capacity(n);
        let mut previous: Option<Vec<f64>> = None;
        for i in 0..n {
            // Occasional exact duplicates exercise the tie-break.
            let v = match &previous {
                Some(p) if rng.random_bool(0.05) => p.clone(),
                _ => random_vector(&mut rng, h),
            };
            previous = Some(v.clone());
            entries.push(IndexEntry {
                answer_id: format!("A{}", i % answers),
                passage: passage(i),
                vector: v,
            });
        }
        let index = AnswerPartitionIndex::build(h, entries).map_err(|e| e.to_string())?;
        let q = random_vector(&mut rng, h);
        let ids: Vec<String> = index.answer_ids().map(str::to_string).collect();
        let filter = MetadataFilter {
            max_year: Some(2010),
            sources: None,
        };
        for k in [1, 5, 64, n / answers.max(1), n + 3] {
            for f in [None, Some(&filter)] {
                for a in &ids {
                    let got: Vec<(String, f64)> = index
                        .topk(a, &q, k, f)
                        .map_err(|e| e.to_string())?
                        .into_iter()
                        .map(|h| (h.passage.passage_id, h.similarity))
                        .collect();
                    let want = brute_topk(&index, a, &q, k, f);
                    ensure(got == want, || format!("corpus {c}, answer {a}, k {k}: mismatch"))?;
                    checked += 1;
                }
            }
        }
        if n >= 8192 {
            let run = |threads: usize| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .unwrap()
                    .install(|| index.topk_all(&ids, &q, 64, None).unwrap())
            };
            let bits = |m: std::collections::BTreeMap<String, Vec<r2e_core::index::EvidenceHit>>| {
                m.into_iter()
                    .flat_map(|(a, hits)| hits.into_iter().map(move |h| (a.clone(), h.row, h.similarity.to_bits())))
                    .collect::<Vec<_>>()
            };
            ensure(bits(run(1)) == bits(run(4)), || format!("corpus {c}: parallel differs from serial"))?;
        }
    }
    Ok(format!("100 corpora, {checked} searches equal brute force; parallel == serial"))
}

fn bias_correction_values() -> Outcome {
    let zero = bias_correction(&[8, 2, 5, 0], 0.0).map_err(|e| e.to_string())?;
    ensure(zero.iter().all(|&f| f == 0.0), || format!("c = 0 gave {zero:?}"))?;
    let f = bias_correction(&[8, 2], 1.0).map_err(|e| e.to_string())?;
    ensure((f[0] + 0.470).abs() < 1e-3 && (f[1] - 0.916).abs() < 1e-3, || format!("(8, 2), c = 1 gave {f:?}"))?;
    for step in 1..=100 {
        let c = step as f64 / 100.0;
        let f = bias_correction(&[8, 2], c).map_err(|e| e.to_string())?;
        let z = 0.3;
        ensure(z + f[1] > z + f[0], || format!("no flip at c = {c}"))?;
    }
    Ok(format!("c = 0 gives zeros; (8, 2), c = 1 -> ({:.3}, {:.3}); flip holds for c in (0, 1]", f[0], f[1]))
}

struct SynthRun {
    spearman_posterior: f64,
    spearman_mlm: f64,
    training_secs: f64,
    queries: usize,
    rr: [Vec<f64>; 3],
}

fn synth_run() -> Result<SynthRun, String> {
    let world_cfg = SynthWorldConfig::default();
    let world = SynthWorld::new(world_cfg.clone()).map_err(|e| e.to_string())?;
    let corpus = world.generate(1);
    let cfg = R2eConfig::synth_desk(&world_cfg, 4);
    let trained = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_pipeline(&corpus.documents, &corpus.dictionary, &cfg))
        .map_err(|e| e.to_string())?;
    let sys = trained.system().map_err(|e| e.to_string())?;
    let held_out = trained.held_out();
    let log_a = (world.entities.len() as f64).ln();
    let opts = RankOptions {
        k: cfg.inference.k,
        c: 0.0,
        basis: RankBasis::Corrected,
    };
    let (mut z, mut truth, mut mlm) = (Vec::new(), Vec::new(), Vec::new());
    for p in &held_out {
        let out = sys.rank(&p.masked_text, &opts, None).map_err(|e| e.to_string())?;
        let posterior = world.posterior_for_text(&p.masked_text);
        let mlm_logits = sys
            .mlm
            .answer_logits(&sys.embed_query(&p.masked_text).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for (i, a) in world.entities.iter().enumerate() {
            z.push(out.list.get(a).ok_or("missing answer")?.logit);
            truth.push(posterior[i].ln() + log_a);
            mlm.push(mlm_logits[sys.answers.position(a).ok_or("missing answer")?]);
        }
    }
    // The ordering is judged on a class-balanced query set with the default
    // correction strength, where the frequency prior is no shortcut.
    let balanced = world.stratified_queries(100, 77);
    let corrected = RankOptions { c: 0.5, ..opts };
    let freq = sys.rank_freq().map_err(|e| e.to_string())?;
    let mut ranks: [Vec<usize>; 3] = Default::default();
    for (text, gold) in &balanced {
        let out = sys.rank(text, &corrected, None).map_err(|e| e.to_string())?;
        let mcs = sys.rank_mcs(text, opts.k).map_err(|e| e.to_string())?;
        for (slot, list) in [&out.list, &mcs, &freq].into_iter().enumerate() {
            ranks[slot].push(list.rank_of(gold).ok_or("gold not ranked")?);
        }
    }
    let rr = ranks.map(|r| r.iter().map(|&k| 1.0 / k as f64).collect());
    Ok(SynthRun {
        spearman_posterior: spearman(&z, &truth).map_err(|e| e.to_string())?,
        spearman_mlm: spearman(&z, &mlm).map_err(|e| e.to_string())?,
        training_secs: trained.timings.training_secs(),
        queries: held_out.len(),
        rr,
    })
}

fn posterior_consistency(run: &Result<SynthRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let detail = format!(
        "Spearman(reasoner, log posterior) {:.3}, Spearman(reasoner, MLM) {:.3}, {} queries, training {:.0}s",
        run.spearman_posterior, run.spearman_mlm, run.queries, run.training_secs
    );
    ensure(
        run.spearman_posterior > 0.8 && run.spearman_mlm > 0.8 && run.training_secs <= 600.0,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn end_to_end_ordering(run: &Result<SynthRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let mrr = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let [r2e, mcs, freq] = &run.rr;
    let a = paired_bootstrap(r2e, mcs, 1000, 11).map_err(|e| e.to_string())?;
    let b = paired_bootstrap(mcs, freq, 1000, 12).map_err(|e| e.to_string())?;
    let detail = format!(
        "balanced queries {}: MRR R2E {:.4}, MCS {:.4}, FREQ {:.4}; p(R2E > MCS) = {:.3}, p(MCS > FREQ) = {:.3}",
        r2e.len(),
        mrr(r2e),
        mrr(mcs),
        mrr(freq),
        a.p_value,
        b.p_value
    );
    ensure(a.p_value < 0.05 && b.p_value < 0.05, || detail.clone())?;
    Ok(detail)
}

fn audit_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000u64 {
        let k = 2 + (case % 7) as usize;
        let model = random_reasoner(400 + case / 50, k, PairVariant::Conv);
        let n = rng.random_range(1..=k);
        let features = random_features(&model, &mut rng, n, k);
        let (z, p) = model.combine(&features).map_err(|e| e.to_string())?;
        let (z0, p0) = model.audit_rescore(&features, &[]).map_err(|e| e.to_string())?;
        ensure(z0 == z && p0 == p, || format!("case {case}: empty mask changed the score"))?;
        let all: Vec<usize> = (0..k).collect();
        let (_, p_all) = model.audit_rescore(&features, &all).map_err(|e| e.to_string())?;
        let g_empty = model.null_logit().map_err(|e| e.to_string())?;
        ensure(p_all == r2e_core::diffkernel::sigmoid(g_empty), || format!("case {case}: mask-all differs"))?;
        let i = rng.random_range(0..k);
        let (zi, _) = model.audit_rescore(&features, &[i]).map_err(|e| e.to_string())?;
        let direct = model
            .combine(&features.with_nulls(&[i]).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?
            .0;
        ensure(zi == direct, || format!("case {case}: single mask {zi} vs direct {direct}"))?;
    }
    Ok("1000 cases: empty mask exact, mask-all = sigmoid(g(empty)), single mask = recomputation".into())
}

fn brute_auc(s: &[f64], l: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in l.iter().enumerate() {
        for (j, &lj) in l.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn jackknife_variance(s: &[f64], l: &[bool]) -> f64 {
    let n = s.len();
    let thetas: Vec<f64> = (0..n)
        .map(|i| {
            let (ss, ll): (Vec<f64>, Vec<bool>) = s
                .iter()
                .zip(l)
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (a, b))| (*a, *b))
                .unzip();
            auroc(&ss, &ll).unwrap()
        })
        .collect();
    let mean = thetas.iter().sum::<f64>() / n as f64;
    (n as f64 - 1.0) / n as f64 * thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>()
}

fn metrics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_auc: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=500);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| ((rng.random::<f64>() + if l { 0.3 } else { 0.0 }) * 20.0).round())
            .collect();
        let a = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        worst_auc = worst_auc.max((a - brute_auc(&scores, &labels)).abs());
    }
    ensure(worst_auc < 1e-12, || format!("AUROC off by {worst_auc:.3e}"))?;

    let rs = RelativeSuccess::from_summary(ContingencySummary {
        tp: 6,
        pred_pos: 10,
        fn_successes: 2,
        pred_neg: 10,
    })
    .map_err(|e| e.to_string())?;
    let se: f64 = (1.0 / 6.0 - 1.0 / 10.0 + 1.0 / 2.0 - 1.0 / 10.0_f64).sqrt();
    let want = (3.0_f64.ln() - 1.959_964 * se).exp();
    let (lo, hi) = rs.ci.ok_or("no interval")?;
    ensure((rs.rs - 3.0).abs() < 1e-12 && (lo - want).abs() < 1e-4 && (hi * lo - 9.0).abs() < 1e-9, || {
        format!("RS {} ci ({lo}, {hi})", rs.rs)
    })?;
    // Same counts through the score/label path.
    let scores: Vec<f64> = (0..20).map(|i| if i < 10 { 1.0 } else { 0.0 }).collect();
    let labels: Vec<bool> = (0..20).map(|i| i < 6 || (10..12).contains(&i)).collect();
    let via_scores = relative_success(&scores, &labels, 0.5).map_err(|e| e.to_string())?;
    ensure(via_scores == rs, || "score path disagrees".into())?;

    let mut worst_ratio: f64 = 0.0;
    for t in 0..20 {
        let n = 300;
        let labels: Vec<bool> = (0..n).map(|i| (i + t) % 3 == 0).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| rng.random::<f64>() + if l { 0.4 } else { 0.0 })
            .collect();
        let d = delong_variance(&scores, &labels).map_err(|e| e.to_string())?;
        let j = jackknife_variance(&scores, &labels);
        worst_ratio = worst_ratio.max((d / j - 1.0).abs());
    }
    ensure(worst_ratio < 0.10, || format!("DeLong/jackknife off by {:.1}%", worst_ratio * 100.0))?;
    Ok(format!(
        "AUROC max error {worst_auc:.1e} over 100 sets; RS 3.0 with Katz CI ({lo:.3}, {hi:.3}); DeLong within {:.1}% of jackknife",
        worst_ratio * 100.0
    ))
}

fn dropout_statistics() -> Outcome {
    let k = 8;
    let model = random_reasoner(500, k, PairVariant::Conv);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let features = random_features(&model, &mut rng, k, k);
    let mut nulls = 0usize;
    let examples = 10_000;
    for _ in 0..examples {
        let (dropped, _) = apply_evidence_dropout(&features, None, &mut rng);
        nulls += (0..k).filter(|&i| matches!(dropped.feature(i).provenance, Provenance::Null)).count();
    }
    let frac = nulls as f64 / (examples * k) as f64;
    ensure((frac - 0.5).abs() <= 0.02, || format!("NULL fraction {frac:.4}"))?;
    Ok(format!("NULL fraction {frac:.4} over {examples} examples"))
}

fn main() {
    let synth = catch_unwind(synth_run).unwrap_or_else(|_| Err("synthetic pipeline panicked".into()));
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("shapley efficiency", Box::new(shapley_efficiency)),
        ("shapley oracle agreement", Box::new(shapley_oracle_agreement)),
        ("shapley null-player and symmetry", Box::new(shapley_axioms)),
        ("set-combiner permutation invariance", Box::new(permutation_invariance)),
        ("gradient checks", Box::new(gradient_checks)),
        ("retrieval exactness", Box::new(retrieval_exactness)),
        ("bias correction", Box::new(bias_correction_values)),
        ("posterior consistency on synthetic world", Box::new(|| posterior_consistency(&synth))),
        ("end-to-end ordering R2E > MCS > FREQ", Box::new(|| end_to_end_ordering(&synth))),
        ("audit identity", Box::new(audit_identity)),
        ("metrics oracles", Box::new(metrics_oracles)),
        ("dropout statistics", Box::new(dropout_statistics)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
