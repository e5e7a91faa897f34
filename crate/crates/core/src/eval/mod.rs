//! Evaluation: ranking and binary metrics, significance tests, the FREQ and
//! MCS baselines, and a synthetic world with a closed-form posterior.

mod baselines;
mod evalset;
mod metrics;
mod stats;
pub mod synth;

pub use baselines::{freq_baseline, mcs_baseline, McsDivisor};
pub use evalset::{parse_eval_set, threshold_sweep_csv, write_eval_set, EvalRecord};
pub use metrics::{
    auroc, delong_compare, delong_variance, metrics_from_ranks, ranking_metrics, relative_success, rs_ztest,
    Aggregation, AurocComparison, ContingencySummary, RankingMetrics, RelativeSuccess, DEFAULT_CUTOFFS,
};
pub use stats::{paired_bootstrap, spearman, BootstrapResult};
pub use synth::{SynthCorpus, SynthSentence, SynthWorld, SynthWorldConfig};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("paired inputs differ in length: {left} vs {right}")]
    Unpaired { left: usize, right: usize },
    #[error("gold answer `{0}` missing from its ranking")]
    GoldMissing(String),
    #[error("both classes must be present")]
    SingleClass,
    #[error("a predicted group is empty")]
    EmptyGroup,
    #[error("relative success undefined: a group has zero successes")]
    UndefinedRelativeSuccess,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
}
