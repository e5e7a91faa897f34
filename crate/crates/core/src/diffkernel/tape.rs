//! Reverse-mode tape over the fixed primitive set used by the encoder and the
//! reasoner.

use std::borrow::Cow;
use std::collections::HashMap;

use super::{KernelError, ParameterSet, Tensor};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// The closed set of primitives the tape understands. Every variant has a
/// backward rule in [`Tape::backward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Leaf,
    Param,
    MatMul,
    MatMulNt,
    Affine,
    Add,
    Mul,
    Scale,
    Gelu,
    Sigmoid,
    Softmax,
    LayerNorm,
    Embedding,
    SliceCols,
    ConcatCols,
    ConcatRows,
    RepeatRows,
    Reshape,
    Conv1x1,
    WhereRows,
    MeanRows,
    Sum,
    CrossEntropy,
    BceWithLogits,
}

enum Op<T> {
    Leaf,
    Param(String),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Affine(NodeId, NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    SliceCols {
        a: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    RepeatRows(NodeId),
    Reshape(NodeId),
    Conv1x1(NodeId, NodeId, NodeId),
    WhereRows {
        a: NodeId,
        fill: NodeId,
        replace: Vec<bool>,
    },
    MeanRows {
        a: NodeId,
        rows: Vec<usize>,
    },
    Sum(NodeId),
    CrossEntropy {
        logits: NodeId,
        target: usize,
        probs: Vec<T>,
    },
    BceWithLogits {
        logit: NodeId,
        label: T,
    },
}

impl<T> Op<T> {
    fn primitive(&self) -> Primitive {
        match self {
            Op::Leaf => Primitive::Leaf,
            Op::Param(_) => Primitive::Param,
            Op::MatMul(..) => Primitive::MatMul,
            Op::MatMulNt(..) => Primitive::MatMulNt,
            Op::Affine(..) => Primitive::Affine,
            Op::Add(..) => Primitive::Add,
            Op::Mul(..) => Primitive::Mul,
            Op::Scale(..) => Primitive::Scale,
            Op::Gelu(_) => Primitive::Gelu,
            Op::Sigmoid(_) => Primitive::Sigmoid,
            Op::Softmax(_) => Primitive::Softmax,
            Op::LayerNorm { .. } => Primitive::LayerNorm,
            Op::Embedding { .. } => Primitive::Embedding,
            Op::SliceCols { .. } => Primitive::SliceCols,
            Op::ConcatCols(_) => Primitive::ConcatCols,
            Op::ConcatRows(_) => Primitive::ConcatRows,
            Op::RepeatRows(_) => Primitive::RepeatRows,
            Op::Reshape(_) => Primitive::Reshape,
            Op::Conv1x1(..) => Primitive::Conv1x1,
            Op::WhereRows { .. } => Primitive::WhereRows,
            Op::MeanRows { .. } => Primitive::MeanRows,
            Op::Sum(_) => Primitive::Sum,
            Op::CrossEntropy { .. } => Primitive::CrossEntropy,
            Op::BceWithLogits { .. } => Primitive::BceWithLogits,
        }
    }
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
}

/// Scales the gradient a primitive passes back to its inputs. Only used to
/// prove that the gradient checker catches a broken backward rule.
#[derive(Debug, Clone, Copy)]
pub struct BackwardFault {
    pub primitive: Primitive,
    pub factor: f64,
}

/// Records a forward computation and replays it backwards.
pub struct Tape<'a, T: Scalar> {
    params: &'a ParameterSet<T>,
    nodes: Vec<Node<'a, T>>,
    param_nodes: HashMap<String, NodeId>,
    fault: Option<BackwardFault>,
}

// Dense kernels on row-major slices.

/// `A[m,k] · B[k,n]`
pub(crate) fn mm<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `A[m,k] · B[n,k]ᵀ`
pub(crate) fn mm_nt<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s = s + x * y;
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// `A[m,k]ᵀ · B[m,n]`
pub(crate) fn mm_tn<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row softmax where columns with `valid[c] == false` receive probability 0,
/// i.e. an additive `-inf` mask.
pub(crate) fn softmax_row<T: Scalar>(row: &[T], valid: Option<&[bool]>, out: &mut [T]) {
    let is_valid = |c: usize| valid.is_none_or(|v| v[c]);
    let mut max = T::neg_infinity();
    for (c, &v) in row.iter().enumerate() {
        if is_valid(c) && v > max {
            max = v;
        }
    }
    let mut total = T::zero();
    for (c, (&v, o)) in row.iter().zip(out.iter_mut()).enumerate() {
        if is_valid(c) {
            *o = (v - max).exp();
            total = total + *o;
        } else {
            *o = T::zero();
        }
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new(params: &'a ParameterSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: HashMap::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn with_fault(mut self, fault: BackwardFault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn params(&self) -> &'a ParameterSet<T> {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<NodeId, KernelError> {
        if !value.is_finite() {
            return Err(KernelError::NonFinite {
                op: op.primitive(),
            });
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.rows(), v.cols())
    }

    fn mismatch(&self, op: &'static str, a: NodeId, b: NodeId) -> KernelError {
        KernelError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// A constant input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<NodeId, KernelError> {
        self.push(value, Op::Leaf)
    }

    /// A trainable parameter; repeated lookups return the same node.
    pub fn param(&mut self, name: &str) -> Result<NodeId, KernelError> {
        if let Some(&id) = self.param_nodes.get(name) {
            return Ok(id);
        }
        let t = self.params.get(name)?;
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Param(name.to_string()),
        });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = mm(self.value(a).data(), m, k, self.value(b).data(), n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let out = mm_nt(self.value(a).data(), m, k, self.value(b).data(), n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b))
    }

    /// `x[n,d] · w[d,o] + b[o]`
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let (n, d) = self.dims(x);
        let (d2, o) = self.dims(w);
        if d != d2 {
            return Err(self.mismatch("affine", x, w));
        }
        if self.value(b).len() != o {
            return Err(self.mismatch("affine", w, b));
        }
        let mut out = mm(self.value(x).data(), n, d, self.value(w).data(), o);
        let bias = self.value(b).data();
        for row in out.chunks_mut(o) {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v = *v + bv;
            }
        }
        self.push(Tensor::matrix(n, o, out)?, Op::Affine(x, w, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        if self.value(a).len() != self.value(b).len() {
            return Err(self.mismatch("add", a, b));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out)?, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        if self.value(a).len() != self.value(b).len() {
            return Err(self.mismatch("mul", a, b));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out)?, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId, KernelError> {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, KernelError> {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, KernelError> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Row-wise softmax. `key_valid`, when given, masks columns additively
    /// with `-inf`.
    pub fn softmax_rows(
        &mut self,
        a: NodeId,
        key_valid: Option<&[bool]>,
    ) -> Result<NodeId, KernelError> {
        let (r, c) = self.dims(a);
        if let Some(v) = key_valid {
            if v.len() != c {
                return Err(KernelError::ShapeMismatch {
                    op: "softmax_rows",
                    left: vec![r, c],
                    right: vec![v.len()],
                });
            }
            if !v.iter().any(|&b| b) {
                return Err(KernelError::EmptyMask);
            }
        }
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for (row, orow) in src.chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(row, key_valid, orow);
        }
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out)?, Op::Softmax(a))
    }

    /// Layer normalisation over the trailing dimension.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
        eps: T,
    ) -> Result<NodeId, KernelError> {
        let (r, c) = self.dims(x);
        if self.value(gain).len() != c || self.value(shift).len() != c {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let s = self.value(shift).data();
        let n = T::of(c as f64);
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + s[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
        )
    }

    /// Gathers rows of `table` by index.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, KernelError> {
        let (rows, c) = self.dims(table);
        if ids.is_empty() {
            return Err(KernelError::InvalidShape(vec![0, c]));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= rows {
                return Err(KernelError::IndexOutOfRange { index: i, len: rows });
            }
            out.extend_from_slice(t.row_slice(i));
        }
        self.push(
            Tensor::matrix(ids.len(), c, out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, KernelError> {
        let (r, c) = self.dims(a);
        if len == 0 || start + len > c {
            return Err(KernelError::IndexOutOfRange {
                index: start + len,
                len: c,
            });
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(r * len);
        for row in src.chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        self.push(Tensor::matrix(r, len, out)?, Op::SliceCols { a, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, KernelError> {
        let r = self.dims(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            if self.dims(p).0 != r {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
            total += self.dims(p).1;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        self.push(Tensor::matrix(r, total, out)?, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, KernelError> {
        let c = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.dims(p).1 != c {
                return Err(self.mismatch("concat_rows", parts[0], p));
            }
            rows += self.dims(p).0;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::matrix(rows, c, out)?, Op::ConcatRows(parts.to_vec()))
    }

    /// Broadcasts a single row `[1, c]` to `[n, c]`.
    pub fn repeat_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId, KernelError> {
        let (r, c) = self.dims(a);
        if r != 1 || n == 0 {
            return Err(KernelError::InvalidShape(self.shape(a).to_vec()));
        }
        let row = self.value(a).data();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(row);
        }
        self.push(Tensor::matrix(n, c, out)?, Op::RepeatRows(a))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, KernelError> {
        let t = self.value(a).reshape(shape)?;
        self.push(t, Op::Reshape(a))
    }

    /// Kernel-size-1 convolution across a channel axis: `x[c_in, n]`,
    /// `w[c_out, c_in]`, `b[c_out]` gives `w·x + b` with the bias broadcast
    /// over positions.
    pub fn conv1x1(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let (cin, n) = self.dims(x);
        let (cout, cin2) = self.dims(w);
        if cin != cin2 {
            return Err(self.mismatch("conv1x1", x, w));
        }
        if self.value(b).len() != cout {
            return Err(self.mismatch("conv1x1", w, b));
        }
        let mut out = mm(self.value(w).data(), cout, cin, self.value(x).data(), n);
        let bias = self.value(b).data();
        for (o, row) in out.chunks_mut(n).enumerate() {
            for v in row {
                *v = *v + bias[o];
            }
        }
        self.push(Tensor::matrix(cout, n, out)?, Op::Conv1x1(x, w, b))
    }

    /// Replaces rows of `a` flagged in `replace` with the single row `fill`.
    pub fn where_rows(
        &mut self,
        a: NodeId,
        fill: NodeId,
        replace: &[bool],
    ) -> Result<NodeId, KernelError> {
        let (r, c) = self.dims(a);
        if replace.len() != r || self.value(fill).len() != c {
            return Err(self.mismatch("where_rows", a, fill));
        }
        let src = self.value(a).data();
        let f = self.value(fill).data();
        let mut out = Vec::with_capacity(r * c);
        for (i, row) in src.chunks(c).enumerate() {
            out.extend_from_slice(if replace[i] { f } else { row });
        }
        self.push(
            Tensor::matrix(r, c, out)?,
            Op::WhereRows {
                a,
                fill,
                replace: replace.to_vec(),
            },
        )
    }

    /// Mean over the selected rows, giving `[1, c]`.
    pub fn mean_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId, KernelError> {
        let (r, c) = self.dims(a);
        if rows.is_empty() {
            return Err(KernelError::EmptyMask);
        }
        let src = self.value(a);
        let mut out = vec![T::zero(); c];
        for &i in rows {
            if i >= r {
                return Err(KernelError::IndexOutOfRange { index: i, len: r });
            }
            for (o, &v) in out.iter_mut().zip(src.row_slice(i)) {
                *o = *o + v;
            }
        }
        let inv = T::one() / T::of(rows.len() as f64);
        for o in &mut out {
            *o = *o * inv;
        }
        self.push(
            Tensor::row(out)?,
            Op::MeanRows {
                a,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, KernelError> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `-log softmax(logits)[target]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId, KernelError> {
        let z = self.value(logits);
        if z.rows() != 1 {
            return Err(KernelError::InvalidShape(z.shape().to_vec()));
        }
        if target >= z.len() {
            return Err(KernelError::IndexOutOfRange {
                index: target,
                len: z.len(),
            });
        }
        let mut probs = vec![T::zero(); z.len()];
        softmax_row(z.data(), None, &mut probs);
        let max = z.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.data().iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = lse - z.data()[target];
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        )
    }

    /// Binary cross-entropy on a single logit.
    pub fn bce_with_logits(&mut self, logit: NodeId, label: T) -> Result<NodeId, KernelError> {
        let z = self.value(logit);
        if z.len() != 1 {
            return Err(KernelError::NonScalarLoss(z.shape().to_vec()));
        }
        let z = z.data()[0];
        let loss = z.max(T::zero()) - z * label + (T::one() + (-z.abs()).exp()).ln();
        self.push(Tensor::scalar(loss), Op::BceWithLogits { logit, label })
    }

    /// Accumulates `d loss / d node` for every node and returns the parameter
    /// gradients (zeros for parameters the loss does not touch).
    pub fn backward(&self, loss: NodeId) -> Result<ParameterSet<T>, KernelError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(KernelError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = self.params.zeros_like();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(KernelError::NonFinite {
                    op: self.nodes[idx].op.primitive(),
                });
            }
            let node = &self.nodes[idx];
            let factor = match self.fault {
                Some(f) if f.primitive == node.op.primitive() => Some(T::of(f.factor)),
                _ => None,
            };
            let emit = |grads: &mut Vec<Option<Vec<T>>>, target: NodeId, mut contrib: Vec<T>| {
                if let Some(s) = factor {
                    for v in &mut contrib {
                        *v = *v * s;
                    }
                }
                match &mut grads[target.0] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(contrib) {
                            *a = *a + c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => {
                    let t = out.get_mut(name)?;
                    for (a, &v) in t.data_mut().iter_mut().zip(&g) {
                        *a = *a + v;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).1;
                    let da = mm_nt(&g, m, n, self.value(*b).data(), k);
                    let db = mm_tn(self.value(*a).data(), m, k, &g, n);
                    emit(&mut grads, *a, da);
                    emit(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).0;
                    let da = mm(&g, m, n, self.value(*b).data(), k);
                    let db = mm_tn(&g, m, n, self.value(*a).data(), k);
                    emit(&mut grads, *a, da);
                    emit(&mut grads, *b, db);
                }
                Op::Affine(x, w, b) => {
                    let (n, d) = self.dims(*x);
                    let o = self.dims(*w).1;
                    let dx = mm_nt(&g, n, o, self.value(*w).data(), d);
                    let dw = mm_tn(self.value(*x).data(), n, d, &g, o);
                    let mut db = vec![T::zero(); o];
                    for row in g.chunks(o) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    emit(&mut grads, *x, dx);
                    emit(&mut grads, *w, dw);
                    emit(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    emit(&mut grads, *a, g.clone());
                    emit(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let da = g.iter().zip(bv).map(|(&gv, &y)| gv * y).collect();
                    let db = g.iter().zip(av).map(|(&gv, &x)| gv * x).collect();
                    emit(&mut grads, *a, da);
                    emit(&mut grads, *b, db);
                }
                Op::Scale(a, s) => {
                    let da = g.iter().map(|&v| v * *s).collect();
                    emit(&mut grads, *a, da);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a).data();
                    let da = g.iter().zip(x).map(|(&gv, &xv)| gv * gelu_grad(xv)).collect();
                    emit(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let da = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                        .collect();
                    emit(&mut grads, *a, da);
                }
                Op::Softmax(a) => {
                    let c = node.value.cols();
                    let y = node.value.data();
                    let mut da = vec![T::zero(); y.len()];
                    for ((yr, gr), dr) in y.chunks(c).zip(g.chunks(c)).zip(da.chunks_mut(c)) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((d, &p), &q) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = p * (q - dot);
                        }
                    }
                    emit(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    shift,
                    xhat,
                    inv_std,
                } => {
                    let c = node.value.cols();
                    let gv = self.value(*gain).data();
                    let n = T::of(c as f64);
                    let mut dx = vec![T::zero(); g.len()];
                    let mut dgain = vec![T::zero(); c];
                    let mut dshift = vec![T::zero(); c];
                    for (i, (gr, hr)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hr[j];
                            dgain[j] = dgain[j] + gr[j] * hr[j];
                            dshift[j] = dshift[j] + gr[j];
                        }
                        mean_dh = mean_dh / n;
                        mean_dh_h = mean_dh_h / n;
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            dx[i * c + j] = inv_std[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    emit(&mut grads, *x, dx);
                    emit(&mut grads, *gain, dgain);
                    emit(&mut grads, *shift, dshift);
                }
                Op::Embedding { table, ids } => {
                    let c = node.value.cols();
                    let mut dt = vec![T::zero(); self.value(*table).len()];
                    for (r, &i) in ids.iter().enumerate() {
                        for j in 0..c {
                            dt[i * c + j] = dt[i * c + j] + g[r * c + j];
                        }
                    }
                    emit(&mut grads, *table, dt);
                }
                Op::SliceCols { a, start } => {
                    let (r, c) = self.dims(*a);
                    let len = node.value.cols();
                    let mut da = vec![T::zero(); r * c];
                    for i in 0..r {
                        da[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    emit(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let r = node.value.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.dims(p).1;
                        let mut dp = Vec::with_capacity(r * c);
                        for i in 0..r {
                            dp.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                        }
                        offset += c;
                        emit(&mut grads, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        emit(&mut grads, p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::RepeatRows(a) => {
                    let c = node.value.cols();
                    let mut da = vec![T::zero(); c];
                    for row in g.chunks(c) {
                        for (d, &v) in da.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    emit(&mut grads, *a, da);
                }
                Op::Reshape(a) => emit(&mut grads, *a, g),
                Op::Conv1x1(x, w, b) => {
                    let (cin, n) = self.dims(*x);
                    let cout = self.dims(*w).0;
                    let dw = mm_nt(&g, cout, n, self.value(*x).data(), cin);
                    let dx = mm_tn(self.value(*w).data(), cout, cin, &g, n);
                    let db = g.chunks(n).map(|row| row.iter().copied().sum()).collect();
                    emit(&mut grads, *x, dx);
                    emit(&mut grads, *w, dw);
                    emit(&mut grads, *b, db);
                }
                Op::WhereRows { a, fill, replace } => {
                    let c = node.value.cols();
                    let mut da = g.clone();
                    let mut df = vec![T::zero(); c];
                    for (i, &rep) in replace.iter().enumerate() {
                        if rep {
                            for j in 0..c {
                                df[j] = df[j] + g[i * c + j];
                                da[i * c + j] = T::zero();
                            }
                        }
                    }
                    emit(&mut grads, *a, da);
                    emit(&mut grads, *fill, df);
                }
                Op::MeanRows { a, rows } => {
                    let (r, c) = self.dims(*a);
                    let inv = T::one() / T::of(rows.len() as f64);
                    let mut da = vec![T::zero(); r * c];
                    for &i in rows {
                        for j in 0..c {
                            da[i * c + j] = da[i * c + j] + g[j] * inv;
                        }
                    }
                    emit(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    emit(&mut grads, *a, vec![g[0]; n]);
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let mut dz: Vec<T> = probs.iter().map(|&p| p * g[0]).collect();
                    dz[*target] = dz[*target] - g[0];
                    emit(&mut grads, *logits, dz);
                }
                Op::BceWithLogits { logit, label } => {
                    let z = self.value(*logit).data()[0];
                    emit(&mut grads, *logit, vec![(sigmoid(z) - *label) * g[0]]);
                }
            }
        }
        if !out.all_finite() {
            return Err(KernelError::NonFinite {
                op: Primitive::Param,
            });
        }
        Ok(out)
    }
}
