use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BackwardFault, KernelError, ParameterSet, PrimitiveGraph, Tape};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many randomly chosen entries per parameter tensor
    /// (`None` checks every entry).
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
    /// Lower bound on the relative-error denominator. Entries whose true
    /// gradient is zero (e.g. attention key biases) otherwise compare
    /// rounding noise against rounding noise.
    pub denominator_floor: f64,
    #[doc(hidden)]
    pub fault: Option<BackwardFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_entries_per_param: None,
            seed: 0,
            denominator_floor: 1e-6,
            fault: None,
        }
    }
}

impl GradCheckOptions {
    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

fn scalar_loss<G: PrimitiveGraph<f64> + ?Sized>(
    graph: &G,
    params: &ParameterSet<f64>,
) -> Result<f64, KernelError> {
    let mut tape = Tape::new(params);
    let out = graph.build(&mut tape)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(KernelError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Compares reverse-mode gradients against central finite differences.
/// Runs in 64-bit precision only.
pub fn gradient_check<G: PrimitiveGraph<f64> + ?Sized>(
    graph: &G,
    params: &ParameterSet<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, KernelError> {
    let analytic = {
        let mut tape = Tape::new(params);
        if let Some(f) = opts.fault {
            tape = tape.with_fault(f);
        }
        let out = graph.build(&mut tape)?;
        tape.backward(out)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name)?.len();
        let indices: Vec<usize> = match opts.max_entries_per_param {
            Some(cap) if cap < n => {
                let mut v = sample(&mut rng, n, cap).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let grad = analytic.get(&name)?.data().to_vec();
        for i in indices {
            let original = probe.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = original + opts.step;
            let plus = scalar_loss(graph, &probe)?;
            probe.get_mut(&name)?.data_mut()[i] = original - opts.step;
            let minus = scalar_loss(graph, &probe)?;
            probe.get_mut(&name)?.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad[i];
            let denom = a.abs().max(numeric.abs()).max(opts.denominator_floor);
            let rel = (a - numeric).abs() / denom;
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
