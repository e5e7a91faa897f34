//! Shapley attributions of a score to its evidence slots: an exact
//! enumeration for small `k` and the permutation estimator with antithetic
//! orderings.

mod explanation;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use explanation::{EvidenceAttribution, Explanation};

use crate::diffkernel::sigmoid;
use crate::reasoner::{FeatureSet, Reasoner, ReasonerError};
use crate::scalar::Scalar;

/// Largest `k` accepted by [`shapley_exact`].
pub const MAX_EXACT_FEATURES: usize = 12;
/// Default permutation count before antithetic doubling.
pub const DEFAULT_PERMUTATIONS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum AttributionError {
    #[error("exact Shapley values need k <= {max}, got {k}")]
    TooManyFeatures { k: usize, max: usize },
    #[error("at least one permutation is required")]
    NoPermutations,
    #[error("bias term can only be attached to logit-space attributions")]
    ProbabilitySpace,
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputSpace {
    Logit,
    #[default]
    Probability,
}

impl std::str::FromStr for OutputSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logit" => Ok(Self::Logit),
            "probability" | "prob" => Ok(Self::Probability),
            other => Err(format!("unknown output space `{other}`")),
        }
    }
}

/// A cooperative game over `k` players: the score with exactly the players
/// flagged in `present` contributing.
pub trait Coalition: Sync {
    fn players(&self) -> usize;
    fn value(&self, present: &[bool]) -> Result<f64, AttributionError>;
}

/// A closure-backed game, mostly for tests and toy models.
pub struct FnCoalition<F> {
    pub k: usize,
    pub f: F,
}

impl<F> Coalition for FnCoalition<F>
where
    F: Fn(&[bool]) -> f64 + Sync,
{
    fn players(&self) -> usize {
        self.k
    }

    fn value(&self, present: &[bool]) -> Result<f64, AttributionError> {
        Ok((self.f)(present))
    }
}

/// The reasoner's score as a game over its evidence slots: absent slots
/// are replaced by the NULL embedding.
pub struct ReasonerCoalition<'a, T: Scalar> {
    pub reasoner: &'a Reasoner<T>,
    pub features: &'a FeatureSet<T>,
    pub space: OutputSpace,
}

impl<T: Scalar> Coalition for ReasonerCoalition<'_, T> {
    fn players(&self) -> usize {
        self.features.k()
    }

    fn value(&self, present: &[bool]) -> Result<f64, AttributionError> {
        let absent: Vec<bool> = present.iter().map(|&p| !p).collect();
        let z = self.reasoner.logit_masked(self.features, &absent)?.as_f64();
        Ok(match self.space {
            OutputSpace::Logit => z,
            OutputSpace::Probability => sigmoid(z),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub phi: Vec<f64>,
    /// Score with every slot absent, `g(∅)`.
    pub baseline: f64,
    /// Score with every slot present, plus the bias term if attached.
    pub total: f64,
    /// Permutations before antithetic doubling; `None` for exact values.
    pub permutations: Option<usize>,
    pub output_space: OutputSpace,
    pub bias_term: Option<f64>,
}

impl AttributionResult {
    /// `total − (baseline + Σφ + bias)`; zero up to rounding.
    pub fn efficiency_gap(&self) -> f64 {
        self.total - self.baseline - self.phi.iter().sum::<f64>() - self.bias_term.unwrap_or(0.0)
    }
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

fn present_from_mask(mask: usize, k: usize) -> Vec<bool> {
    (0..k).map(|i| mask & (1 << i) != 0).collect()
}

/// Exact Shapley values by evaluating every coalition once.
pub fn shapley_exact<G: Coalition + ?Sized>(game: &G, space: OutputSpace) -> Result<AttributionResult, AttributionError> {
    let k = game.players();
    if k > MAX_EXACT_FEATURES {
        return Err(AttributionError::TooManyFeatures {
            k,
            max: MAX_EXACT_FEATURES,
        });
    }
    let values: Vec<f64> = (0..1usize << k)
        .into_par_iter()
        .map(|m| game.value(&present_from_mask(m, k)))
        .collect::<Result<_, _>>()?;
    let fact = factorials(k);
    let mut phi = vec![0.0; k];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for s in (0..1usize << k).filter(|s| s & bit == 0) {
            let size = s.count_ones() as usize;
            let w = fact[size] * fact[k - 1 - size] / fact[k];
            *p += w * (values[s | bit] - values[s]);
        }
    }
    Ok(AttributionResult {
        phi,
        baseline: values[0],
        total: values[(1usize << k) - 1],
        permutations: None,
        output_space: space,
        bias_term: None,
    })
}

/// `2M` orderings of `k` players; with antithetic sampling ordering `M + i`
/// is ordering `i` reversed, otherwise all `2M` are drawn independently.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationPlan {
    pub seed: u64,
    pub m: usize,
    pub antithetic: bool,
    pub orderings: Vec<Vec<usize>>,
}

impl PermutationPlan {
    pub fn new(k: usize, m: usize, seed: u64) -> Self {
        Self::build(k, m, seed, true)
    }

    pub fn independent(k: usize, m: usize, seed: u64) -> Self {
        Self::build(k, m, seed, false)
    }

    fn build(k: usize, m: usize, seed: u64, antithetic: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| {
            let mut p: Vec<usize> = (0..k).collect();
            p.shuffle(rng);
            p
        };
        let mut orderings: Vec<Vec<usize>> = (0..m).map(|_| draw(&mut rng)).collect();
        if antithetic {
            let reversed: Vec<Vec<usize>> = orderings.iter().map(|p| p.iter().rev().copied().collect()).collect();
            orderings.extend(reversed);
        } else {
            orderings.extend((0..m).map(|_| draw(&mut rng)));
        }
        Self {
            seed,
            m,
            antithetic,
            orderings,
        }
    }
}

/// Permutation-sampled Shapley values: for each ordering, the marginal gain
/// of adding each player to the players before it, folded into a running
/// mean in ordering order. Orderings are evaluated in parallel; the fold
/// order is fixed, so results depend only on the plan.
pub fn shapley_permutation<G: Coalition + ?Sized>(
    game: &G,
    plan: &PermutationPlan,
    space: OutputSpace,
) -> Result<AttributionResult, AttributionError> {
    if plan.m == 0 {
        return Err(AttributionError::NoPermutations);
    }
    let k = game.players();
    let baseline = game.value(&vec![false; k])?;
    let marginals: Vec<Vec<f64>> = plan
        .orderings
        .par_iter()
        .map(|order| {
            let mut present = vec![false; k];
            let mut prev = baseline;
            let mut out = vec![0.0; k];
            for &i in order {
                present[i] = true;
                let s = game.value(&present)?;
                out[i] = s - prev;
                prev = s;
            }
            Ok(out)
        })
        .collect::<Result<_, AttributionError>>()?;
    let mut phi = vec![0.0; k];
    for (j, d) in marginals.iter().enumerate() {
        let j = (j + 1) as f64;
        for (p, &di) in phi.iter_mut().zip(d) {
            *p = (j - 1.0) / j * *p + di / j;
        }
    }
    let total = game.value(&vec![true; k])?;
    Ok(AttributionResult {
        phi,
        baseline,
        total,
        permutations: Some(plan.m),
        output_space: space,
        bias_term: None,
    })
}

/// Adds the bias correction `f_c` as an extra additive attribution.
pub fn attach_bias_feature(mut result: AttributionResult, f_c: f64) -> Result<AttributionResult, AttributionError> {
    if result.output_space != OutputSpace::Logit {
        return Err(AttributionError::ProbabilitySpace);
    }
    let previous = result.bias_term.unwrap_or(0.0);
    result.total += f_c - previous;
    result.bias_term = Some(f_c);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub m: usize,
    /// Mean over trials of the mean absolute deviation from the exact values.
    pub mean_abs_error: f64,
    /// Standard error of that mean across trials.
    pub std_error: f64,
}

/// Estimator error against the exact values for each `M` in `grid`.
pub fn convergence_report<G: Coalition + ?Sized>(
    game: &G,
    grid: &[usize],
    trials: usize,
    seed: u64,
    antithetic: bool,
) -> Result<Vec<ConvergenceRow>, AttributionError> {
    let exact = shapley_exact(game, OutputSpace::Logit)?;
    let k = game.players().max(1) as f64;
    grid.iter()
        .map(|&m| {
            let errors: Vec<f64> = (0..trials)
                .map(|t| {
                    let s = seed.wrapping_add((m as u64) << 32).wrapping_add(t as u64);
                    let plan = PermutationPlan::build(game.players(), m, s, antithetic);
                    let est = shapley_permutation(game, &plan, OutputSpace::Logit)?;
                    Ok(est.phi.iter().zip(&exact.phi).map(|(a, b)| (a - b).abs()).sum::<f64>() / k)
                })
                .collect::<Result<_, AttributionError>>()?;
            let n = errors.len().max(1) as f64;
            let mean = errors.iter().sum::<f64>() / n;
            let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            Ok(ConvergenceRow {
                m,
                mean_abs_error: mean,
                std_error: (var / n).sqrt(),
            })
        })
        .collect()
}
