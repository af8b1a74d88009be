//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! An eager tape: every operation appends a node to a [`Graph`] and computes
//! its value immediately, so the node list is topologically ordered by
//! construction. [`Graph::backward`] walks the tape in reverse from a scalar
//! loss node and accumulates gradients into every `requires_grad` tensor
//! reachable from it; unreachable tensors keep `grad: None`.
//!
//! The op set is deliberately small but sufficient to express and train the
//! rankers in this crate: matmul, row-broadcast bias, elementwise arithmetic,
//! relu / sigmoid, last-dim softmax, layer norm, fused multi-head attention
//! with key padding, row gather (embedding lookup and logit-row selection),
//! masked mean pooling, scalar concatenation, and a loss head that injects an
//! externally computed d(loss)/d(scores) vector into the tape.
//!
//! Everything is f64 and sequential, so identical seeded builds produce
//! bit-identical values and gradients.

use thiserror::Error;

/// Additive pre-softmax mask applied to padded attention keys.
const ATTENTION_MASK_VALUE: f64 = -1e30;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: tensor with shape {shape:?} has an empty last dimension")]
    EmptyLastDim {
        op: &'static str,
        shape: Vec<usize>,
    },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotMatrix {
        op: &'static str,
        shape: Vec<usize>,
    },
    #[error("multihead_attention: model dim {dim} is not divisible by {heads} heads")]
    HeadsIndivisible { dim: usize, heads: usize },
    #[error("{op}: row {id} out of range for {rows} rows")]
    RowOutOfRange {
        op: &'static str,
        id: usize,
        rows: usize,
    },
    #[error("{op}: reduction over an empty selection")]
    EmptyReduction { op: &'static str },
    #[error("{op}: expected {expected} elements, got {got}")]
    NumelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("backward: loss node has shape {shape:?}, expected a single-element tensor")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward: gradients already populated; call reset() before a second pass")]
    BackwardAlreadyRun,
    #[error("tensor: shape {shape:?} implies {expected} elements, data has {got}")]
    DataLenMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
}

/// Dense row-major f64 tensor. `grad` is populated by [`Graph::backward`]
/// for tensors that require gradients and are reachable from the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLenMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows/cols of a rank-2 tensor.
    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        if self.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op,
                shape: self.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Size of the last dimension, which must be non-empty.
    fn last_dim(&self, op: &'static str) -> Result<usize, TensorError> {
        let d = self.shape.last().copied().unwrap_or(0);
        if d == 0 {
            return Err(TensorError::EmptyLastDim {
                op,
                shape: self.shape.clone(),
            });
        }
        Ok(d)
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddBias { x: NodeId, bias: NodeId },
    MulScalar { x: NodeId, c: f64 },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Sum { x: NodeId },
    Reshape { x: NodeId },
    Matmul { a: NodeId, b: NodeId },
    SoftmaxLastDim { x: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    GatherRows { x: NodeId, ids: Vec<usize> },
    MaskedMeanRows { x: NodeId, keep: Vec<bool> },
    MultiheadAttention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        /// Attention weights cached at forward time, `heads * lq * lk`.
        /// Padded keys carry exactly zero weight, which also silences their
        /// gradient paths in the backward pass.
        attn: Vec<f64>,
    },
    ConcatScalars { xs: Vec<NodeId> },
    LossHead { scores: NodeId, grad: Vec<f64> },
}

fn for_each_input(op: &Op, mut f: impl FnMut(NodeId)) {
    match op {
        Op::Leaf => {}
        Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::Matmul { a, b } => {
            f(*a);
            f(*b);
        }
        Op::AddBias { x, bias } => {
            f(*x);
            f(*bias);
        }
        Op::MulScalar { x, .. }
        | Op::Relu { x }
        | Op::Sigmoid { x }
        | Op::Sum { x }
        | Op::Reshape { x }
        | Op::SoftmaxLastDim { x }
        | Op::GatherRows { x, .. }
        | Op::MaskedMeanRows { x, .. } => f(*x),
        Op::LayerNorm { x, gain, bias, .. } => {
            f(*x);
            f(*gain);
            f(*bias);
        }
        Op::MultiheadAttention { q, k, v, .. } => {
            f(*q);
            f(*k);
            f(*v);
        }
        Op::ConcatScalars { xs } => {
            for x in xs {
                f(*x);
            }
        }
        Op::LossHead { scores, .. } => f(*scores),
    }
}

struct Node {
    op: Op,
    out: Tensor,
}

/// Eager autodiff tape. Nodes are appended in construction order, which is
/// also a valid topological order for the backward sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].out
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].out.data
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].out.data[0]
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].out.grad.as_deref()
    }

    /// Clears all gradients so another backward pass may run.
    pub fn reset(&mut self) {
        for node in &mut self.nodes {
            node.out.grad = None;
        }
        self.backward_done = false;
    }

    fn push(&mut self, op: Op, out: Tensor) -> NodeId {
        self.nodes.push(Node { op, out });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    pub fn constant(&mut self, mut t: Tensor) -> NodeId {
        t.requires_grad = false;
        self.push(Op::Leaf, t)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip_elementwise("add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip_elementwise("sub", a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip_elementwise("mul", a, b, |x, y| x * y)
    }

    fn zip_elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].out, &self.nodes[b.0].out);
        if ta.shape != tb.shape {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data: Vec<f64> = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let mut out = Tensor::new(ta.shape.clone(), data).expect("same shape");
        out.requires_grad = ta.requires_grad || tb.requires_grad;
        let op = match name {
            "add" => Op::Add { a, b },
            "sub" => Op::Sub { a, b },
            _ => Op::Mul { a, b },
        };
        Ok(self.push(op, out))
    }

    /// `x + bias` where `x` is `[r, c]` and `bias` is `[c]`, broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (tx, tb) = (&self.nodes[x.0].out, &self.nodes[bias.0].out);
        let (_, c) = tx.matrix_dims("add_bias")?;
        if tb.shape != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let mut data = tx.data.clone();
        for row in data.chunks_exact_mut(c) {
            for (o, &b) in row.iter_mut().zip(&tb.data) {
                *o += b;
            }
        }
        let mut out = Tensor::new(tx.shape.clone(), data).expect("same shape");
        out.requires_grad = tx.requires_grad || tb.requires_grad;
        Ok(self.push(Op::AddBias { x, bias }, out))
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let tx = &self.nodes[x.0].out;
        let data = tx.data.iter().map(|&v| v * c).collect();
        let mut out = Tensor::new(tx.shape.clone(), data).expect("same shape");
        out.requires_grad = tx.requires_grad;
        self.push(Op::MulScalar { x, c }, out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].out;
        let data = tx.data.iter().map(|&v| v.max(0.0)).collect();
        let mut out = Tensor::new(tx.shape.clone(), data).expect("same shape");
        out.requires_grad = tx.requires_grad;
        self.push(Op::Relu { x }, out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].out;
        let data = tx.data.iter().map(|&v| stable_sigmoid(v)).collect();
        let mut out = Tensor::new(tx.shape.clone(), data).expect("same shape");
        out.requires_grad = tx.requires_grad;
        self.push(Op::Sigmoid { x }, out)
    }

    /// Sum of all elements, producing a `[1]` scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].out;
        let mut out = Tensor::new(vec![1], vec![tx.data.iter().sum()]).expect("scalar");
        out.requires_grad = tx.requires_grad;
        self.push(Op::Sum { x }, out)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let tx = &self.nodes[x.0].out;
        let expected: usize = shape.iter().product();
        if expected != tx.numel() {
            return Err(TensorError::NumelMismatch {
                op: "reshape",
                expected,
                got: tx.numel(),
            });
        }
        let mut out = Tensor::new(shape, tx.data.clone()).expect("checked numel");
        out.requires_grad = tx.requires_grad;
        Ok(self.push(Op::Reshape { x }, out))
    }

    /// Matrix product of `[r, k]` and `[k, c]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].out, &self.nodes[b.0].out);
        let (r, ka) = ta.matrix_dims("matmul")?;
        let (kb, c) = tb.matrix_dims("matmul")?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let mut data = vec![0.0; r * c];
        matmul_kernel(&ta.data, &tb.data, r, ka, c, &mut data);
        let mut out = Tensor::new(vec![r, c], data).expect("sized");
        out.requires_grad = ta.requires_grad || tb.requires_grad;
        Ok(self.push(Op::Matmul { a, b }, out))
    }

    /// Softmax over the last dimension; leading dimensions are batch rows.
    /// Shift-invariant via per-row max subtraction.
    pub fn softmax_lastdim(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let tx = &self.nodes[x.0].out;
        let d = tx.last_dim("softmax_lastdim")?;
        let mut data = tx.data.clone();
        for row in data.chunks_exact_mut(d) {
            softmax_in_place(row);
        }
        let mut out = Tensor::new(tx.shape.clone(), data).expect("same shape");
        out.requires_grad = tx.requires_grad;
        Ok(self.push(Op::SoftmaxLastDim { x }, out))
    }

    /// Layer normalization over the last dimension with learned gain and bias
    /// (population variance, `(x - mean) / sqrt(var + eps) * gain + bias`).
    pub fn layernorm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let (tx, tg, tb) = (
            &self.nodes[x.0].out,
            &self.nodes[gain.0].out,
            &self.nodes[bias.0].out,
        );
        let d = tx.last_dim("layernorm")?;
        if tg.shape != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layernorm",
                lhs: tx.shape.clone(),
                rhs: tg.shape.clone(),
            });
        }
        if tb.shape != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layernorm",
                lhs: tx.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let mut data = tx.data.clone();
        for row in data.chunks_exact_mut(d) {
            let (mean, inv) = layernorm_moments(row, eps);
            for (v, (&g, &b)) in row.iter_mut().zip(tg.data.iter().zip(&tb.data)) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        let mut out = Tensor::new(tx.shape.clone(), data).expect("same shape");
        out.requires_grad = tx.requires_grad || tg.requires_grad || tb.requires_grad;
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, out))
    }

    /// Selects rows of a `[n, d]` matrix; rows may repeat. Used for both
    /// embedding lookup and logit-row selection, so the backward pass
    /// scatter-adds into the source rows.
    pub fn gather_rows(&mut self, x: NodeId, ids: &[usize]) -> Result<NodeId, TensorError> {
        let tx = &self.nodes[x.0].out;
        let (n, d) = tx.matrix_dims("gather_rows")?;
        for &id in ids {
            if id >= n {
                return Err(TensorError::RowOutOfRange {
                    op: "gather_rows",
                    id,
                    rows: n,
                });
            }
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&tx.data[id * d..(id + 1) * d]);
        }
        let mut out = Tensor::new(vec![ids.len(), d], data).expect("sized");
        out.requires_grad = tx.requires_grad;
        Ok(self.push(
            Op::GatherRows {
                x,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    /// Mean over the rows of `[l, d]` where `keep[row]` is true, producing
    /// `[1, d]`. At least one row must be kept.
    pub fn masked_mean_rows(&mut self, x: NodeId, keep: &[bool]) -> Result<NodeId, TensorError> {
        let tx = &self.nodes[x.0].out;
        let (l, d) = tx.matrix_dims("masked_mean_rows")?;
        if keep.len() != l {
            return Err(TensorError::NumelMismatch {
                op: "masked_mean_rows",
                expected: l,
                got: keep.len(),
            });
        }
        let cnt = keep.iter().filter(|&&k| k).count();
        if cnt == 0 {
            return Err(TensorError::EmptyReduction {
                op: "masked_mean_rows",
            });
        }
        let mut data = vec![0.0; d];
        for (row, _) in tx.data.chunks_exact(d).zip(keep).filter(|(_, &k)| k) {
            for (o, &v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        let scale = 1.0 / cnt as f64;
        for o in &mut data {
            *o *= scale;
        }
        let mut out = Tensor::new(vec![1, d], data).expect("sized");
        out.requires_grad = tx.requires_grad;
        Ok(self.push(
            Op::MaskedMeanRows {
                x,
                keep: keep.to_vec(),
            },
            out,
        ))
    }

    /// Fused multi-head scaled dot-product attention.
    ///
    /// `q` is `[lq, d]`, `k` and `v` are `[lk, d]`, with `d % heads == 0`.
    /// Per head: `softmax(q kᵀ / sqrt(d/heads) + mask) v`, heads concatenated
    /// back to `[lq, d]`. `key_pad[j] == true` masks key `j` additively with
    /// -1e30 before the softmax. Projections are the caller's business.
    pub fn multihead_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        key_pad: Option<&[bool]>,
    ) -> Result<NodeId, TensorError> {
        let (tq, tk, tv) = (
            &self.nodes[q.0].out,
            &self.nodes[k.0].out,
            &self.nodes[v.0].out,
        );
        let (lq, d) = tq.matrix_dims("multihead_attention")?;
        let (lk, dk_in) = tk.matrix_dims("multihead_attention")?;
        if dk_in != d || tv.shape != [lk, d] {
            return Err(TensorError::ShapeMismatch {
                op: "multihead_attention",
                lhs: tq.shape.clone(),
                rhs: if dk_in != d {
                    tk.shape.clone()
                } else {
                    tv.shape.clone()
                },
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::HeadsIndivisible { dim: d, heads });
        }
        if let Some(pad) = key_pad {
            if pad.len() != lk {
                return Err(TensorError::NumelMismatch {
                    op: "multihead_attention",
                    expected: lk,
                    got: pad.len(),
                });
            }
            if pad.iter().all(|&p| p) {
                return Err(TensorError::EmptyReduction {
                    op: "multihead_attention",
                });
            }
        }
        let dk = d / heads;
        let inv_sqrt = 1.0 / (dk as f64).sqrt();
        let mut attn = vec![0.0; heads * lq * lk];
        let mut data = vec![0.0; lq * d];
        for h in 0..heads {
            let off = h * dk;
            for i in 0..lq {
                let qrow = &tq.data[i * d + off..i * d + off + dk];
                let arow = &mut attn[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                for (j, a) in arow.iter_mut().enumerate() {
                    let krow = &tk.data[j * d + off..j * d + off + dk];
                    let mut s = 0.0;
                    for (&x, &y) in qrow.iter().zip(krow) {
                        s += x * y;
                    }
                    *a = s * inv_sqrt;
                    if key_pad.is_some_and(|p| p[j]) {
                        *a += ATTENTION_MASK_VALUE;
                    }
                }
                softmax_in_place(arow);
                let orow = &mut data[i * d + off..i * d + off + dk];
                for (j, &a) in arow.iter().enumerate() {
                    let vrow = &tv.data[j * d + off..j * d + off + dk];
                    for (o, &x) in orow.iter_mut().zip(vrow) {
                        *o += a * x;
                    }
                }
            }
        }
        let mut out = Tensor::new(vec![lq, d], data).expect("sized");
        out.requires_grad = tq.requires_grad || tk.requires_grad || tv.requires_grad;
        Ok(self.push(Op::MultiheadAttention { q, k, v, heads, attn }, out))
    }

    /// Concatenates single-element nodes into a `[n]` vector. The same node
    /// may appear multiple times; its gradient accumulates once per slot.
    pub fn concat_scalars(&mut self, xs: &[NodeId]) -> Result<NodeId, TensorError> {
        let mut data = Vec::with_capacity(xs.len());
        let mut requires = false;
        for &x in xs {
            let tx = &self.nodes[x.0].out;
            if tx.numel() != 1 {
                return Err(TensorError::NumelMismatch {
                    op: "concat_scalars",
                    expected: 1,
                    got: tx.numel(),
                });
            }
            data.push(tx.data[0]);
            requires |= tx.requires_grad;
        }
        let mut out = Tensor::new(vec![xs.len()], data).expect("sized");
        out.requires_grad = requires;
        Ok(self.push(Op::ConcatScalars { xs: xs.to_vec() }, out))
    }

    /// Scalar loss node over a score vector with an externally computed
    /// gradient: backward adds `upstream * grad[i]` to `scores[i]`. This is
    /// how the ranking losses (pure functions with analytic gradients)
    /// connect to the tape.
    pub fn loss_head(
        &mut self,
        scores: NodeId,
        value: f64,
        grad: Vec<f64>,
    ) -> Result<NodeId, TensorError> {
        let ts = &self.nodes[scores.0].out;
        if ts.numel() != grad.len() {
            return Err(TensorError::NumelMismatch {
                op: "loss_head",
                expected: ts.numel(),
                got: grad.len(),
            });
        }
        let mut out = Tensor::new(vec![1], vec![value]).expect("scalar");
        out.requires_grad = ts.requires_grad;
        Ok(self.push(Op::LossHead { scores, grad }, out))
    }

    /// Reverse sweep from a scalar loss node. Populates `grad` on every
    /// `requires_grad` tensor reachable from the loss; tensors not on a path
    /// to the loss keep `grad: None`. A second call without [`Graph::reset`]
    /// is rejected.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        let loss_tensor = &self.nodes[loss.0].out;
        if loss_tensor.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_tensor.shape.clone(),
            });
        }
        let mut needs = vec![false; self.nodes.len()];
        if loss_tensor.requires_grad {
            needs[loss.0] = true;
            for i in (0..=loss.0).rev() {
                if needs[i] {
                    for_each_input(&self.nodes[i].op, |inp| {
                        if self.nodes[inp.0].out.requires_grad {
                            needs[inp.0] = true;
                        }
                    });
                }
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = self
            .nodes
            .iter()
            .zip(&needs)
            .map(|(node, &n)| n.then(|| vec![0.0; node.out.numel()]))
            .collect();
        if needs[loss.0] {
            grads[loss.0].as_mut().expect("allocated")[0] = 1.0;
        }
        for i in (0..=loss.0).rev() {
            if !needs[i] {
                continue;
            }
            let upstream = grads[i].take().expect("allocated");
            self.backward_node(i, &upstream, &mut grads);
            grads[i] = Some(upstream);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                node.out.grad = Some(g);
            }
        }
        self.backward_done = true;
        Ok(())
    }

    fn backward_node(&self, i: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Inputs that do not require gradients have no buffer; skip them.
        macro_rules! acc {
            ($id:expr, $g:ident, $body:expr) => {
                if let Some($g) = grads[$id.0].as_mut() {
                    $body
                }
            };
        }
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                acc!(a, g, {
                    for (o, &u) in g.iter_mut().zip(up) {
                        *o += u;
                    }
                });
                acc!(b, g, {
                    for (o, &u) in g.iter_mut().zip(up) {
                        *o += u;
                    }
                });
            }
            Op::Sub { a, b } => {
                acc!(a, g, {
                    for (o, &u) in g.iter_mut().zip(up) {
                        *o += u;
                    }
                });
                acc!(b, g, {
                    for (o, &u) in g.iter_mut().zip(up) {
                        *o -= u;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (da, db) = (&self.nodes[a.0].out.data, &self.nodes[b.0].out.data);
                acc!(a, g, {
                    for ((o, &u), &y) in g.iter_mut().zip(up).zip(db) {
                        *o += u * y;
                    }
                });
                acc!(b, g, {
                    for ((o, &u), &x) in g.iter_mut().zip(up).zip(da) {
                        *o += u * x;
                    }
                });
            }
            Op::AddBias { x, bias } => {
                acc!(x, g, {
                    for (o, &u) in g.iter_mut().zip(up) {
                        *o += u;
                    }
                });
                let c = self.nodes[bias.0].out.numel();
                acc!(bias, g, {
                    for row in up.chunks_exact(c) {
                        for (o, &u) in g.iter_mut().zip(row) {
                            *o += u;
                        }
                    }
                });
            }
            Op::MulScalar { x, c } => {
                acc!(x, g, {
                    for (o, &u) in g.iter_mut().zip(up) {
                        *o += u * c;
                    }
                });
            }
            Op::Relu { x } => {
                let dx = &self.nodes[x.0].out.data;
                acc!(x, g, {
                    for ((o, &u), &v) in g.iter_mut().zip(up).zip(dx) {
                        if v > 0.0 {
                            *o += u;
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = &node.out.data;
                acc!(x, g, {
                    for ((o, &u), &s) in g.iter_mut().zip(up).zip(y) {
                        *o += u * s * (1.0 - s);
                    }
                });
            }
            Op::Sum { x } => {
                acc!(x, g, {
                    for o in g.iter_mut() {
                        *o += up[0];
                    }
                });
            }
            Op::Reshape { x } => {
                acc!(x, g, {
                    for (o, &u) in g.iter_mut().zip(up) {
                        *o += u;
                    }
                });
            }
            Op::Matmul { a, b } => {
                let (ta, tb) = (&self.nodes[a.0].out, &self.nodes[b.0].out);
                let (r, k) = (ta.shape[0], ta.shape[1]);
                let c = tb.shape[1];
                acc!(a, g, {
                    // dA = up · Bᵀ
                    for i in 0..r {
                        let urow = &up[i * c..(i + 1) * c];
                        let garow = &mut g[i * k..(i + 1) * k];
                        for (kk, ga) in garow.iter_mut().enumerate() {
                            let brow = &tb.data[kk * c..(kk + 1) * c];
                            let mut s = 0.0;
                            for (&u, &bv) in urow.iter().zip(brow) {
                                s += u * bv;
                            }
                            *ga += s;
                        }
                    }
                });
                acc!(b, g, {
                    // dB = Aᵀ · up
                    for i in 0..r {
                        let urow = &up[i * c..(i + 1) * c];
                        let arow = &ta.data[i * k..(i + 1) * k];
                        for (kk, &av) in arow.iter().enumerate() {
                            let gbrow = &mut g[kk * c..(kk + 1) * c];
                            for (gb, &u) in gbrow.iter_mut().zip(urow) {
                                *gb += av * u;
                            }
                        }
                    }
                });
            }
            Op::SoftmaxLastDim { x } => {
                let d = *node.out.shape.last().expect("checked non-empty");
                let y = &node.out.data;
                acc!(x, g, {
                    for ((grow, urow), srow) in g
                        .chunks_exact_mut(d)
                        .zip(up.chunks_exact(d))
                        .zip(y.chunks_exact(d))
                    {
                        let mut dot = 0.0;
                        for (&u, &s) in urow.iter().zip(srow) {
                            dot += u * s;
                        }
                        for ((o, &u), &s) in grow.iter_mut().zip(urow).zip(srow) {
                            *o += s * (u - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let tx = &self.nodes[x.0].out;
                let tg = &self.nodes[gain.0].out;
                let d = tg.numel();
                acc!(x, g, {
                    for (grow, (xrow, urow)) in g
                        .chunks_exact_mut(d)
                        .zip(tx.data.chunks_exact(d).zip(up.chunks_exact(d)))
                    {
                        let (mean, inv) = layernorm_moments(xrow, *eps);
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for ((&u, &gn), &xv) in urow.iter().zip(&tg.data).zip(xrow) {
                            let gdy = u * gn;
                            m1 += gdy;
                            m2 += gdy * (xv - mean) * inv;
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for ((o, (&u, &gn)), &xv) in grow
                            .iter_mut()
                            .zip(urow.iter().zip(&tg.data))
                            .zip(xrow)
                        {
                            let xhat = (xv - mean) * inv;
                            *o += inv * (u * gn - m1 - xhat * m2);
                        }
                    }
                });
                acc!(gain, g, {
                    for (xrow, urow) in tx.data.chunks_exact(d).zip(up.chunks_exact(d)) {
                        let (mean, inv) = layernorm_moments(xrow, *eps);
                        for ((o, &u), &xv) in g.iter_mut().zip(urow).zip(xrow) {
                            *o += u * (xv - mean) * inv;
                        }
                    }
                });
                acc!(bias, g, {
                    for urow in up.chunks_exact(d) {
                        for (o, &u) in g.iter_mut().zip(urow) {
                            *o += u;
                        }
                    }
                });
            }
            Op::GatherRows { x, ids } => {
                let d = node.out.shape[1];
                acc!(x, g, {
                    for (t, &id) in ids.iter().enumerate() {
                        let urow = &up[t * d..(t + 1) * d];
                        let grow = &mut g[id * d..(id + 1) * d];
                        for (o, &u) in grow.iter_mut().zip(urow) {
                            *o += u;
                        }
                    }
                });
            }
            Op::MaskedMeanRows { x, keep } => {
                let d = node.out.shape[1];
                let cnt = keep.iter().filter(|&&k| k).count();
                let scale = 1.0 / cnt as f64;
                acc!(x, g, {
                    for (grow, _) in g.chunks_exact_mut(d).zip(keep).filter(|(_, &k)| k) {
                        for (o, &u) in grow.iter_mut().zip(up) {
                            *o += u * scale;
                        }
                    }
                });
            }
            Op::MultiheadAttention { q, k, v, heads, attn } => {
                let (tq, tk, tv) = (
                    &self.nodes[q.0].out,
                    &self.nodes[k.0].out,
                    &self.nodes[v.0].out,
                );
                let (lq, d) = (tq.shape[0], tq.shape[1]);
                let lk = tk.shape[0];
                let dk = d / heads;
                let inv_sqrt = 1.0 / (dk as f64).sqrt();
                // Per-head scratch reused across heads.
                let mut dattn = vec![0.0; lk];
                for h in 0..*heads {
                    let off = h * dk;
                    for i in 0..lq {
                        let urow = &up[i * d + off..i * d + off + dk];
                        let arow = &attn[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                        // dV_j += a_ij * dOut_i ; dattn_j = dOut_i · V_j
                        for (j, da) in dattn.iter_mut().enumerate() {
                            let vrow = &tv.data[j * d + off..j * d + off + dk];
                            let mut s = 0.0;
                            for (&u, &x) in urow.iter().zip(vrow) {
                                s += u * x;
                            }
                            *da = s;
                        }
                        if let Some(gv) = grads[v.0].as_mut() {
                            for (j, &a) in arow.iter().enumerate() {
                                if a != 0.0 {
                                    let grow = &mut gv[j * d + off..j * d + off + dk];
                                    for (o, &u) in grow.iter_mut().zip(urow) {
                                        *o += a * u;
                                    }
                                }
                            }
                        }
                        // softmax backward: ds_j = a_j (dattn_j - Σ dattn a)
                        let mut dot = 0.0;
                        for (&da, &a) in dattn.iter().zip(arow) {
                            dot += da * a;
                        }
                        for (j, da) in dattn.iter_mut().enumerate() {
                            *da = arow[j] * (*da - dot) * inv_sqrt;
                        }
                        if let Some(gq) = grads[q.0].as_mut() {
                            let grow = &mut gq[i * d + off..i * d + off + dk];
                            for (j, &ds) in dattn.iter().enumerate() {
                                if ds != 0.0 {
                                    let krow = &tk.data[j * d + off..j * d + off + dk];
                                    for (o, &x) in grow.iter_mut().zip(krow) {
                                        *o += ds * x;
                                    }
                                }
                            }
                        }
                        if let Some(gk) = grads[k.0].as_mut() {
                            let qrow = &tq.data[i * d + off..i * d + off + dk];
                            for (j, &ds) in dattn.iter().enumerate() {
                                if ds != 0.0 {
                                    let grow = &mut gk[j * d + off..j * d + off + dk];
                                    for (o, &x) in grow.iter_mut().zip(qrow) {
                                        *o += ds * x;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::ConcatScalars { xs } => {
                for (t, x) in xs.iter().enumerate() {
                    acc!(x, g, {
                        g[0] += up[t];
                    });
                }
            }
            Op::LossHead { scores, grad } => {
                acc!(scores, g, {
                    for (o, &dg) in g.iter_mut().zip(grad) {
                        *o += up[0] * dg;
                    }
                });
            }
        }
    }
}

/// `out += a · b` for row-major `a: [r, k]`, `b: [k, c]`.
fn matmul_kernel(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * c..(kk + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// In-place softmax with max subtraction; `row` must be non-empty.
fn softmax_in_place(row: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

fn layernorm_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
