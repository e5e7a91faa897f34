//! Small differentiable-computation layer: tensors, named parameters, a
//! reverse-mode tape over a fixed primitive set, AdamW, finite-difference
//! gradient checking, and a binary checkpoint format.

mod checkpoint;
mod gradcheck;
pub mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use optim::{AdamW, AdamWConfig, OptimizerState};
pub use params::{Init, ParameterSet, WEIGHT_INIT_STD};
pub use tape::{sigmoid, BackwardFault, NodeId, Primitive, Tape};
pub use tensor::Tensor;

pub(crate) use tape::softmax_row;

use crate::scalar::Scalar;

/// Layer-norm epsilon used throughout.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {op:?}")]
    NonFinite { op: Primitive },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("invalid initialiser for `{0}`")]
    InvalidInit(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mask selects no positions")]
    EmptyMask,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A computation built on a tape from the current parameter values. Inputs
/// are captured by the implementor.
pub trait PrimitiveGraph<T: Scalar> {
    fn build(&self, tape: &mut Tape<'_, T>) -> Result<NodeId, KernelError>;
}

impl<T, F> PrimitiveGraph<T> for F
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<NodeId, KernelError>,
{
    fn build(&self, tape: &mut Tape<'_, T>) -> Result<NodeId, KernelError> {
        self(tape)
    }
}

/// Evaluates a graph and returns its output tensor.
pub fn forward<T: Scalar, G: PrimitiveGraph<T> + ?Sized>(
    graph: &G,
    params: &ParameterSet<T>,
) -> Result<Tensor<T>, KernelError> {
    let mut tape = Tape::new(params);
    let out = graph.build(&mut tape)?;
    Ok(tape.value(out).clone())
}

/// Evaluates a scalar-valued graph and returns `(loss, d loss / d params)`.
pub fn backward<T: Scalar, G: PrimitiveGraph<T> + ?Sized>(
    graph: &G,
    params: &ParameterSet<T>,
) -> Result<(T, ParameterSet<T>), KernelError> {
    let mut tape = Tape::new(params);
    let out = graph.build(&mut tape)?;
    let loss = tape.value(out);
    if loss.len() != 1 {
        return Err(KernelError::NonScalarLoss(loss.shape().to_vec()));
    }
    let loss = loss.data()[0];
    let grads = tape.backward(out)?;
    Ok((loss, grads))
}
