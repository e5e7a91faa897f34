use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;
use crate::ranking::RankedAnswerList;

/// Hits cutoffs reported by default.
pub const DEFAULT_CUTOFFS: [usize; 2] = [10, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Average over queries.
    Micro,
    /// Average per gold answer, then over answers.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub mrr: f64,
    pub mr: f64,
    /// Cutoff → hits@cutoff.
    pub hits: BTreeMap<usize, f64>,
    pub aggregation: Aggregation,
    pub queries: usize,
}

/// Metrics from `(gold answer, 1-based rank of gold)` pairs.
pub fn metrics_from_ranks(
    ranks: &[(String, usize)],
    cutoffs: &[usize],
    aggregation: Aggregation,
) -> Result<RankingMetrics, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::Empty("rankings"));
    }
    if ranks.iter().any(|(_, r)| *r == 0) {
        return Err(EvalError::Invalid("ranks are 1-based".into()));
    }
    // (rr, rank, hits...) per query, grouped as required.
    let row = |r: usize| -> Vec<f64> {
        let mut v = vec![1.0 / r as f64, r as f64];
        v.extend(cutoffs.iter().map(|&c| if r <= c { 1.0 } else { 0.0 }));
        v
    };
    let mean = |rows: &[Vec<f64>]| -> Vec<f64> {
        let mut acc = vec![0.0; rows[0].len()];
        for r in rows {
            for (a, x) in acc.iter_mut().zip(r) {
                *a += x;
            }
        }
        acc.iter().map(|a| a / rows.len() as f64).collect()
    };
    let averaged = match aggregation {
        Aggregation::Micro => mean(&ranks.iter().map(|(_, r)| row(*r)).collect::<Vec<_>>()),
        Aggregation::Macro => {
            let mut groups: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
            for (a, r) in ranks {
                groups.entry(a.as_str()).or_default().push(row(*r));
            }
            mean(&groups.values().map(|g| mean(g)).collect::<Vec<_>>())
        }
    };
    Ok(RankingMetrics {
        mrr: averaged[0],
        mr: averaged[1],
        hits: cutoffs.iter().copied().zip(averaged[2..].iter().copied()).collect(),
        aggregation,
        queries: ranks.len(),
    })
}

/// MRR, MR and hits@cutoff for rankings against their gold answers.
pub fn ranking_metrics(
    rankings: &[RankedAnswerList],
    gold: &[String],
    cutoffs: &[usize],
    aggregation: Aggregation,
) -> Result<RankingMetrics, EvalError> {
    if rankings.len() != gold.len() {
        return Err(EvalError::Unpaired {
            left: rankings.len(),
            right: gold.len(),
        });
    }
    let ranks = rankings
        .iter()
        .zip(gold)
        .map(|(r, g)| {
            r.rank_of(g)
                .map(|rank| (g.clone(), rank))
                .ok_or_else(|| EvalError::GoldMissing(g.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    metrics_from_ranks(&ranks, cutoffs, aggregation)
}

/// 1-based midranks (ties share the average rank).
pub(crate) fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = r;
        }
        i = j + 1;
    }
    out
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Unpaired {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::Invalid("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve: the Mann–Whitney statistic with ties counted
/// as one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (m, n) = check_binary(scores, labels)?;
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (m, n) = (m as f64, n as f64);
    Ok((rank_sum - m * (m + 1.0) / 2.0) / (m * n))
}

/// DeLong structural components: per-positive and per-negative placement
/// values, plus the AUROC.
struct Placements {
    auc: f64,
    v10: Vec<f64>,
    v01: Vec<f64>,
}

fn placements(scores: &[f64], labels: &[bool]) -> Placements {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let all = midranks(&[pos.as_slice(), neg.as_slice()].concat());
    let rp = midranks(&pos);
    let rn = midranks(&neg);
    let v10: Vec<f64> = (0..pos.len()).map(|i| (all[i] - rp[i]) / n).collect();
    let v01: Vec<f64> = (0..neg.len()).map(|j| 1.0 - (all[pos.len() + j] - rn[j]) / m).collect();
    let auc = v10.iter().sum::<f64>() / m;
    Placements { auc, v10, v01 }
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.len() < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// DeLong variance estimate of a single AUROC.
pub fn delong_variance(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    check_binary(scores, labels)?;
    let p = placements(scores, labels);
    Ok(cov(&p.v10, &p.v10) / p.v10.len() as f64 + cov(&p.v01, &p.v01) / p.v01.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocComparison {
    pub auroc_a: f64,
    pub auroc_b: f64,
    /// `auroc_a − auroc_b`.
    pub delta: f64,
    pub z: f64,
    pub p_value: f64,
}

fn two_sided_p(z: f64) -> f64 {
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0)
}

/// DeLong test for two correlated AUROCs computed on the same examples.
pub fn delong_compare(a: &[f64], b: &[f64], labels: &[bool]) -> Result<AurocComparison, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Unpaired {
            left: a.len(),
            right: b.len(),
        });
    }
    check_binary(a, labels)?;
    check_binary(b, labels)?;
    let pa = placements(a, labels);
    let pb = placements(b, labels);
    let (m, n) = (pa.v10.len() as f64, pa.v01.len() as f64);
    let var = (cov(&pa.v10, &pa.v10) + cov(&pb.v10, &pb.v10) - 2.0 * cov(&pa.v10, &pb.v10)) / m
        + (cov(&pa.v01, &pa.v01) + cov(&pb.v01, &pb.v01) - 2.0 * cov(&pa.v01, &pb.v01)) / n;
    let delta = pa.auc - pb.auc;
    let (z, p_value) = if var <= 0.0 {
        if delta == 0.0 {
            (0.0, 1.0)
        } else {
            (delta.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let z = delta / var.sqrt();
        (z, two_sided_p(z))
    };
    Ok(AurocComparison {
        auroc_a: pa.auc,
        auroc_b: pb.auc,
        delta,
        z,
        p_value,
    })
}

/// Counts behind a relative-success estimate. `fn_successes` are the
/// successes among predicted negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencySummary {
    pub tp: u64,
    pub pred_pos: u64,
    pub fn_successes: u64,
    pub pred_neg: u64,
}

impl ContingencySummary {
    /// Predicted positive iff `score >= threshold`.
    pub fn at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self, EvalError> {
        if scores.len() != labels.len() {
            return Err(EvalError::Unpaired {
                left: scores.len(),
                right: labels.len(),
            });
        }
        let mut s = Self {
            tp: 0,
            pred_pos: 0,
            fn_successes: 0,
            pred_neg: 0,
        };
        for (&x, &l) in scores.iter().zip(labels) {
            if x >= threshold {
                s.pred_pos += 1;
                s.tp += l as u64;
            } else {
                s.pred_neg += 1;
                s.fn_successes += l as u64;
            }
        }
        Ok(s)
    }

    pub fn relative_success(&self) -> Result<f64, EvalError> {
        if self.pred_pos == 0 || self.pred_neg == 0 {
            return Err(EvalError::EmptyGroup);
        }
        if self.tp > self.pred_pos || self.fn_successes > self.pred_neg {
            return Err(EvalError::Invalid("successes exceed group size".into()));
        }
        Ok((self.tp as f64 / self.pred_pos as f64) / (self.fn_successes as f64 / self.pred_neg as f64))
    }

    /// Katz variance of `ln RS`; `None` when either group has no successes.
    pub fn log_variance(&self) -> Option<f64> {
        if self.tp == 0 || self.fn_successes == 0 {
            return None;
        }
        Some(
            1.0 / self.tp as f64 - 1.0 / self.pred_pos as f64 + 1.0 / self.fn_successes as f64
                - 1.0 / self.pred_neg as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeSuccess {
    pub rs: f64,
    /// Katz 95% interval; `None` when a group has zero successes.
    pub ci: Option<(f64, f64)>,
    pub summary: ContingencySummary,
}

const Z95: f64 = 1.959_963_984_540_054;

impl RelativeSuccess {
    pub fn from_summary(summary: ContingencySummary) -> Result<Self, EvalError> {
        let rs = summary.relative_success()?;
        let ci = summary.log_variance().map(|v| {
            let half = Z95 * v.sqrt();
            ((rs.ln() - half).exp(), (rs.ln() + half).exp())
        });
        Ok(Self { rs, ci, summary })
    }
}

/// Success rate among predicted positives over that among predicted
/// negatives, with a Katz log-scale 95% interval.
pub fn relative_success(scores: &[f64], labels: &[bool], threshold: f64) -> Result<RelativeSuccess, EvalError> {
    RelativeSuccess::from_summary(ContingencySummary::at_threshold(scores, labels, threshold)?)
}

/// Two-sided Z-test on the difference of `ln RS` with summed Katz variances.
pub fn rs_ztest(a: &ContingencySummary, b: &ContingencySummary) -> Result<f64, EvalError> {
    let (ra, rb) = (a.relative_success()?, b.relative_success()?);
    let (va, vb) = match (a.log_variance(), b.log_variance()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(EvalError::UndefinedRelativeSuccess),
    };
    let d = ra.ln() - rb.ln();
    let var = va + vb;
    if var <= 0.0 {
        return Ok(if d == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(two_sided_p(d / var.sqrt()))
}
