use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BiasError {
    #[error("correction strength c = {0} is outside [0, 1]")]
    Strength(f64),
    #[error("answer counts sum to zero")]
    ZeroTotal,
    #[error("no answers")]
    Empty,
}

/// Per-answer training-corpus counts and a correction strength `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasModel {
    pub counts: BTreeMap<String, u64>,
    pub c: f64,
}

impl BiasModel {
    pub fn new(counts: BTreeMap<String, u64>, c: f64) -> Result<Self, BiasError> {
        let m = Self { counts, c };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), BiasError> {
        if !(0.0..=1.0).contains(&self.c) {
            return Err(BiasError::Strength(self.c));
        }
        if self.counts.is_empty() {
            return Err(BiasError::Empty);
        }
        if self.counts.values().all(|&n| n == 0) {
            return Err(BiasError::ZeroTotal);
        }
        Ok(())
    }

    pub fn with_strength(&self, c: f64) -> Result<Self, BiasError> {
        Self::new(self.counts.clone(), c)
    }

    /// `f_c` for every answer, keyed like `counts`.
    pub fn corrections(&self) -> Result<BTreeMap<String, f64>, BiasError> {
        let f = bias_correction(&self.counts.values().copied().collect::<Vec<_>>(), self.c)?;
        Ok(self.counts.keys().cloned().zip(f).collect())
    }
}

/// `f_c(a) = log(1/|A|) − log(C(a)^c / Σ_b C(b)^c)`, an additive logit
/// term. If any count is zero, one is added to every count first.
pub fn bias_correction(counts: &[u64], c: f64) -> Result<Vec<f64>, BiasError> {
    if !(0.0..=1.0).contains(&c) {
        return Err(BiasError::Strength(c));
    }
    if counts.is_empty() {
        return Err(BiasError::Empty);
    }
    if counts.iter().all(|&n| n == 0) {
        return Err(BiasError::ZeroTotal);
    }
    if c == 0.0 {
        return Ok(vec![0.0; counts.len()]);
    }
    let smooth = u64::from(counts.contains(&0));
    // Work in log space: log C^c = c log C.
    let logs: Vec<f64> = counts.iter().map(|&n| c * ((n + smooth) as f64).ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + logs.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let uniform = -(counts.len() as f64).ln();
    Ok(logs.iter().map(|&l| uniform - (l - log_norm)).collect())
}
