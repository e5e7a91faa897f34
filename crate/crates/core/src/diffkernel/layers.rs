//! Composite building blocks assembled from tape primitives, plus the
//! matching parameter registration helpers. Parameter names are
//! `{prefix}.{part}`.

use rand::Rng;

use super::{Init, KernelError, NodeId, ParameterSet, Tape, LAYER_NORM_EPS};
use crate::scalar::Scalar;

pub fn add_linear<T: Scalar, R: Rng + ?Sized>(
    params: &mut ParameterSet<T>,
    prefix: &str,
    input: usize,
    output: usize,
    rng: &mut R,
) -> Result<(), KernelError> {
    params.add(format!("{prefix}.w"), &[input, output], Init::WEIGHT, rng)?;
    params.add(format!("{prefix}.b"), &[output], Init::Zeros, rng)
}

pub fn add_layer_norm<T: Scalar, R: Rng + ?Sized>(
    params: &mut ParameterSet<T>,
    prefix: &str,
    dim: usize,
    rng: &mut R,
) -> Result<(), KernelError> {
    params.add(format!("{prefix}.gain"), &[dim], Init::Ones, rng)?;
    params.add(format!("{prefix}.shift"), &[dim], Init::Zeros, rng)
}

pub fn add_attention<T: Scalar, R: Rng + ?Sized>(
    params: &mut ParameterSet<T>,
    prefix: &str,
    dim: usize,
    rng: &mut R,
) -> Result<(), KernelError> {
    for part in ["q", "k", "v", "o"] {
        add_linear(params, &format!("{prefix}.{part}"), dim, dim, rng)?;
    }
    Ok(())
}

pub fn add_feed_forward<T: Scalar, R: Rng + ?Sized>(
    params: &mut ParameterSet<T>,
    prefix: &str,
    dim: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<(), KernelError> {
    add_linear(params, &format!("{prefix}.ff1"), dim, hidden, rng)?;
    add_linear(params, &format!("{prefix}.ff2"), hidden, dim, rng)
}

pub fn linear<T: Scalar>(tape: &mut Tape<'_, T>, x: NodeId, prefix: &str) -> Result<NodeId, KernelError> {
    let w = tape.param(&format!("{prefix}.w"))?;
    let b = tape.param(&format!("{prefix}.b"))?;
    tape.affine(x, w, b)
}

pub fn layer_norm<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: NodeId,
    prefix: &str,
) -> Result<NodeId, KernelError> {
    let g = tape.param(&format!("{prefix}.gain"))?;
    let s = tape.param(&format!("{prefix}.shift"))?;
    tape.layer_norm(x, g, s, T::of(LAYER_NORM_EPS))
}

/// `ff2(gelu(ff1(x)))`
pub fn feed_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: NodeId,
    prefix: &str,
) -> Result<NodeId, KernelError> {
    let h = linear(tape, x, &format!("{prefix}.ff1"))?;
    let h = tape.gelu(h)?;
    linear(tape, h, &format!("{prefix}.ff2"))
}

/// Scaled dot-product multihead attention of `queries` over `keys_values`.
/// Keys with `key_valid[j] == false` are masked with `-inf` before the
/// softmax, so they cannot influence any output.
pub fn multihead_attention<T: Scalar>(
    tape: &mut Tape<'_, T>,
    prefix: &str,
    queries: NodeId,
    keys_values: NodeId,
    heads: usize,
    key_valid: Option<&[bool]>,
) -> Result<NodeId, KernelError> {
    let q = linear(tape, queries, &format!("{prefix}.q"))?;
    let k = linear(tape, keys_values, &format!("{prefix}.k"))?;
    let v = linear(tape, keys_values, &format!("{prefix}.v"))?;
    let dim = tape.value(q).cols();
    if heads == 0 || dim % heads != 0 {
        return Err(KernelError::InvalidShape(vec![dim, heads]));
    }
    let head_dim = dim / heads;
    let scale = T::one() / T::of(head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale)?;
        let probs = tape.softmax_rows(scores, key_valid)?;
        outs.push(tape.matmul(probs, vh)?);
    }
    let joined = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    linear(tape, joined, &format!("{prefix}.o"))
}
