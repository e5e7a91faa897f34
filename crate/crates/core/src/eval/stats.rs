use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::midranks;
use super::EvalError;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation (Pearson correlation of midranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Unpaired {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(EvalError::Empty("correlation input"));
    }
    Ok(pearson(&midranks(a), &midranks(b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Mean of `a − b` on the original sample.
    pub mean_difference: f64,
    /// One-sided p-value for `mean(a) > mean(b)`.
    pub p_value: f64,
    /// Percentile 95% interval of the resampled mean difference.
    pub ci: (f64, f64),
    pub resamples: usize,
}

/// Paired bootstrap over per-query values (e.g. reciprocal ranks).
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<BootstrapResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Unpaired {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() || resamples == 0 {
        return Err(EvalError::Empty("bootstrap input"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| d[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let not_greater = means.iter().filter(|&&m| m <= 0.0).count();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok(BootstrapResult {
        mean_difference: mean,
        p_value: (not_greater + 1) as f64 / (resamples + 1) as f64,
        ci: (q(0.025), q(0.975)),
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 100.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn bootstrap_detects_clear_gap_and_not_a_null() {
        let a: Vec<f64> = (0..100).map(|i| 0.5 + (i % 7) as f64 * 0.01).collect();
        let b: Vec<f64> = (0..100).map(|i| 0.3 + (i % 5) as f64 * 0.01).collect();
        assert!(paired_bootstrap(&a, &b, 1000, 1).unwrap().p_value < 0.01);
        assert!(paired_bootstrap(&b, &a, 1000, 1).unwrap().p_value > 0.9);
    }
}
