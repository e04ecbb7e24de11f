//! Reverse-mode tape. Nodes are appended in evaluation order, so the node
//! index is already a topological order and backward is a reverse sweep.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::kernels::{log_sum_exp, matmul_acc, matmul_at_acc, matmul_bt_acc, softmax_in_place};
use crate::real::Real;
use crate::store::ParameterStore;
use crate::tensor::Tensor;

/// Additive mask value for excluded attention entries. `exp` of it underflows
/// to exactly zero in both precisions.
pub const MASKED: f64 = -1e9;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Tanh(usize),
    Relu(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Embedding(usize, Vec<usize>),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax(usize),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        active: Vec<bool>,
        probs: Vec<T>,
        count: usize,
    },
    Sum(usize),
    Mean(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Structural and elementwise operation kinds reachable through [`Graph::apply`].
#[derive(Clone, Debug)]
pub enum OpKind<T> {
    Add,
    Multiply,
    Tanh,
    Relu,
    MatMul,
    Softmax,
    ConcatLastAxis,
    ConcatRows,
    Slice { axis: usize, start: usize, end: usize },
    EmbeddingLookup { indices: Vec<usize> },
    LayerNorm { eps: f64 },
    ScaledDotProductAttention { heads: usize, mask: Option<Tensor<T>> },
}

impl<T: Real> OpKind<T> {
    /// Parses the parameterless kinds by name.
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "add" => Self::Add,
            "multiply" | "mul" => Self::Multiply,
            "tanh" => Self::Tanh,
            "relu" => Self::Relu,
            "matmul" => Self::MatMul,
            "softmax" => Self::Softmax,
            "concat" | "concat-last-axis" => Self::ConcatLastAxis,
            "concat-rows" => Self::ConcatRows,
            other => return Err(TensorError::UnsupportedOp(other.to_string())),
        })
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Self::Add | Self::Multiply | Self::MatMul => Some(2),
            Self::Tanh | Self::Relu | Self::Softmax | Self::Slice { .. } | Self::EmbeddingLookup { .. } => Some(1),
            Self::LayerNorm { .. } | Self::ScaledDotProductAttention { .. } => Some(3),
            Self::ConcatLastAxis | Self::ConcatRows => None,
        }
    }
}

/// A tape of operations recorded during one forward evaluation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, Var>,
    checked: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            checked: false,
        }
    }

    /// In checked mode every op verifies its output is finite.
    pub fn with_checks(mut self, checked: bool) -> Self {
        self.checked = checked;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.as_matrix()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(TensorError::Numeric {
                op: name,
                detail: format!("output of shape {:?}", value.shape()),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Brings a stored parameter onto the tape. Repeated requests for the same
    /// name return the same node so gradients accumulate once.
    pub fn param(&mut self, store: &ParameterStore<T>, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        if let Some(&v) = self.params.get(&idx) {
            return Ok(v);
        }
        let v = self.constant(store.value_at(idx).clone());
        self.params.insert(idx, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(TensorError::Dimension { op: "matmul", lhs: self.dims(a), rhs: self.dims(b) });
        }
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let src = self.data(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(Tensor::matrix(n, m, out)?, Op::Transpose(a.0), "transpose")
    }

    /// Elementwise sum; a `1×n` right operand is broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let (bm, bn) = self.shape(b);
        if (m, n) == (bm, bn) {
            let out: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
            return self.push(Tensor::matrix(m, n, out)?, Op::Add(a.0, b.0), "add");
        }
        if bm == 1 && bn == n {
            let row = self.data(b);
            let out: Vec<T> = self.data(a).iter().enumerate().map(|(i, &x)| x + row[i % n]).collect();
            return self.push(Tensor::matrix(m, n, out)?, Op::AddRow(a.0, b.0), "add");
        }
        Err(TensorError::Dimension { op: "add", lhs: self.dims(a), rhs: self.dims(b) })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Dimension { op: "multiply", lhs: self.dims(a), rhs: self.dims(b) });
        }
        let (m, n) = self.shape(a);
        let out: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        self.push(Tensor::matrix(m, n, out)?, Op::Mul(a.0, b.0), "multiply")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        let (m, n) = self.shape(a);
        let out: Vec<T> = self.data(a).iter().map(|&x| x * c).collect();
        self.push(Tensor::matrix(m, n, out)?, Op::Scale(a.0, c), "scale")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let out: Vec<T> = self.data(a).iter().map(|x| x.tanh()).collect();
        self.push(Tensor::matrix(m, n, out)?, Op::Tanh(a.0), "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let out: Vec<T> = self.data(a).iter().map(|&x| x.max(T::zero())).collect();
        self.push(Tensor::matrix(m, n, out)?, Op::Relu(a.0), "relu")
    }

    /// Concatenates along the last axis; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::UnsupportedOp("concat of zero inputs".into()))?;
        let m = self.shape(first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pm != m {
                return Err(TensorError::Dimension { op: "concat", lhs: self.dims(first), rhs: self.dims(p) });
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        let ids = parts.iter().map(|p| p.0).collect();
        self.push(Tensor::matrix(m, n, out)?, Op::ConcatCols(ids), "concat")
    }

    /// Stacks along the first axis; all parts need the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::UnsupportedOp("concat-rows of zero inputs".into()))?;
        let n = self.shape(first).1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pn != n {
                return Err(TensorError::Dimension { op: "concat-rows", lhs: self.dims(first), rhs: self.dims(p) });
            }
            out.extend_from_slice(self.data(p));
            m += pm;
        }
        let ids = parts.iter().map(|p| p.0).collect();
        self.push(Tensor::matrix(m, n, out)?, Op::ConcatRows(ids), "concat-rows")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if start >= end || end > m {
            return Err(TensorError::Index { op: "slice", index: end, bound: m });
        }
        let out = self.data(a)[start * n..end * n].to_vec();
        self.push(Tensor::matrix(end - start, n, out)?, Op::SliceRows(a.0, start), "slice")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if start >= end || end > n {
            return Err(TensorError::Index { op: "slice", index: end, bound: n });
        }
        let src = self.data(a);
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        self.push(Tensor::matrix(m, end - start, out)?, Op::SliceCols(a.0, start), "slice")
    }

    /// Gathers rows of `table` by index.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (v, d) = self.shape(table);
        if indices.is_empty() {
            return Err(TensorError::Index { op: "embedding", index: 0, bound: 0 });
        }
        let src = self.data(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(TensorError::Index { op: "embedding", index: i, bound: v });
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(Tensor::matrix(indices.len(), d, out)?, Op::Embedding(table.0, indices.to_vec()), "embedding")
    }

    /// Row-wise layer normalization followed by the `1×n` affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.shape(x);
        if self.shape(gamma) != (1, n) || self.shape(beta) != (1, n) {
            return Err(TensorError::Dimension { op: "layer-norm", lhs: self.dims(x), rhs: self.dims(gamma) });
        }
        let eps = T::of(eps);
        let nn = T::of(n as f64);
        let src = self.data(x);
        let g = self.data(gamma);
        let b = self.data(beta);
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let op = Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std };
        self.push(Tensor::matrix(m, n, out)?, op, "layer-norm")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.shape(x);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(Tensor::matrix(m, n, out)?, Op::Softmax(x.0), "softmax")
    }

    /// Multi-head scaled dot-product attention. `q` is `n×d`, `k` is `m×d`,
    /// `v` is `m×dv`; heads split the column axes evenly. `mask`, when given,
    /// is an `n×m` additive term applied to the scores before the softmax.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: Option<&Tensor<T>>) -> Result<Var> {
        let (n, d) = self.shape(q);
        let (m, dk) = self.shape(k);
        let (mv, dv) = self.shape(v);
        if d != dk || m != mv || heads == 0 || d % heads != 0 || dv % heads != 0 {
            return Err(TensorError::Dimension { op: "attention", lhs: self.dims(q), rhs: self.dims(k) });
        }
        if let Some(mask) = mask {
            if mask.as_matrix() != (n, m) {
                return Err(TensorError::Dimension { op: "attention-mask", lhs: vec![n, m], rhs: mask.shape().to_vec() });
            }
        }
        let dh = d / heads;
        let dvh = dv / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![T::zero(); heads * n * m];
        let mut out = vec![T::zero(); n * dv];
        for h in 0..heads {
            let p = &mut probs[h * n * m..(h + 1) * n * m];
            for i in 0..n {
                let qi = &qd[i * d + h * dh..i * d + (h + 1) * dh];
                for j in 0..m {
                    let kj = &kd[j * d + h * dh..j * d + (h + 1) * dh];
                    let mut s = T::zero();
                    for (&a, &b) in qi.iter().zip(kj) {
                        s += a * b;
                    }
                    s *= scale;
                    if let Some(mask) = mask {
                        s += mask.data()[i * m + j];
                    }
                    p[i * m + j] = s;
                }
                softmax_in_place(&mut p[i * m..(i + 1) * m]);
                let oi = &mut out[i * dv + h * dvh..i * dv + (h + 1) * dvh];
                for j in 0..m {
                    let w = p[i * m + j];
                    if w == T::zero() {
                        continue;
                    }
                    let vj = &vd[j * dv + h * dvh..j * dv + (h + 1) * dvh];
                    for (o, &x) in oi.iter_mut().zip(vj) {
                        *o += w * x;
                    }
                }
            }
        }
        let op = Op::Attention { q: q.0, k: k.0, v: v.0, heads, probs };
        self.push(Tensor::matrix(n, dv, out)?, op, "attention")
    }

    /// Mean over active rows of `-log softmax(logits)[target]`. Rows with
    /// `mask[i] == false` are excluded; with no active rows the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: Option<&[bool]>) -> Result<Var> {
        let (m, k) = self.shape(logits);
        if targets.len() != m {
            return Err(TensorError::Dimension { op: "cross-entropy", lhs: vec![m, k], rhs: vec![targets.len()] });
        }
        if let Some(mask) = mask {
            if mask.len() != m {
                return Err(TensorError::Dimension { op: "cross-entropy-mask", lhs: vec![m], rhs: vec![mask.len()] });
            }
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(TensorError::Index { op: "cross-entropy", index: t, bound: k });
        }
        let active: Vec<bool> = (0..m).map(|i| mask.map_or(true, |mk| mk[i])).collect();
        let src = self.data(logits);
        let mut probs = src.to_vec();
        let mut total = T::zero();
        let mut count = 0;
        for i in 0..m {
            let row = &src[i * k..(i + 1) * k];
            softmax_in_place(&mut probs[i * k..(i + 1) * k]);
            if active[i] {
                total += log_sum_exp(row) - row[targets[i]];
                count += 1;
            }
        }
        let loss = if count > 0 { total / T::of(count as f64) } else { T::zero() };
        let op = Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), active, probs, count };
        self.push(Tensor::scalar(loss), op, "cross-entropy")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a.0), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let d = self.data(a);
        let s = d.iter().copied().sum::<T>() / T::of(d.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a.0), "mean")
    }

    /// Generic dispatch by [`OpKind`].
    pub fn apply(&mut self, kind: &OpKind<T>, inputs: &[Var]) -> Result<Var> {
        if let Some(arity) = kind.arity() {
            if inputs.len() != arity {
                return Err(TensorError::UnsupportedOp(format!("{kind:?} with {} inputs", inputs.len())));
            }
        }
        match kind {
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Multiply => self.mul(inputs[0], inputs[1]),
            OpKind::Tanh => self.tanh(inputs[0]),
            OpKind::Relu => self.relu(inputs[0]),
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Softmax => self.softmax_rows(inputs[0]),
            OpKind::ConcatLastAxis => self.concat_cols(inputs),
            OpKind::ConcatRows => self.concat_rows(inputs),
            OpKind::Slice { axis: 0, start, end } => self.slice_rows(inputs[0], *start, *end),
            OpKind::Slice { axis: 1, start, end } => self.slice_cols(inputs[0], *start, *end),
            OpKind::Slice { axis, .. } => Err(TensorError::UnsupportedOp(format!("slice on axis {axis}"))),
            OpKind::EmbeddingLookup { indices } => self.embedding(inputs[0], indices),
            OpKind::LayerNorm { eps } => self.layer_norm(inputs[0], inputs[1], inputs[2], *eps),
            OpKind::ScaledDotProductAttention { heads, mask } => {
                self.attention(inputs[0], inputs[1], inputs[2], *heads, mask.as_ref())
            }
        }
    }

    /// Gradients of a `1×1` node with respect to every node on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Dimension { op: "backward", lhs: self.dims(loss), rhs: vec![1, 1] });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs backward from `loss` and adds parameter gradients into `store`.
    /// Every trainable entry ends up with a populated gradient.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.ensure_grads();
        for (&idx, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(idx, g);
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let (m, n) = node.value.as_matrix();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (_, k) = self.nodes[*a].value.as_matrix();
                let ad = self.nodes[*a].value.data();
                let bd = self.nodes[*b].value.data();
                matmul_bt_acc(g, bd, slot(grads, *a, m * k), m, n, k);
                matmul_at_acc(ad, g, slot(grads, *b, k * n), m, k, n);
            }
            Op::Transpose(a) => {
                let ga = slot(grads, *a, m * n);
                // value is m×n, input was n×m
                for r in 0..m {
                    for c in 0..n {
                        ga[c * m + r] += g[r * n + c];
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, m * n), g);
                add_into(slot(grads, *b, m * n), g);
            }
            Op::AddRow(a, b) => {
                add_into(slot(grads, *a, m * n), g);
                let gb = slot(grads, *b, n);
                for row in g.chunks(n) {
                    add_into(gb, row);
                }
            }
            Op::Mul(a, b) => {
                let ad = self.nodes[*a].value.data();
                let bd = self.nodes[*b].value.data();
                let ga = slot(grads, *a, m * n);
                for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(bd) {
                    *x += gy * y;
                }
                let gb = slot(grads, *b, m * n);
                for ((x, &gy), &y) in gb.iter_mut().zip(g).zip(ad) {
                    *x += gy * y;
                }
            }
            Op::Scale(a, c) => {
                for (x, &gy) in slot(grads, *a, m * n).iter_mut().zip(g) {
                    *x += gy * *c;
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                for ((x, &gy), &t) in slot(grads, *a, m * n).iter_mut().zip(g).zip(y) {
                    *x += gy * (T::one() - t * t);
                }
            }
            Op::Relu(a) => {
                let xd = self.nodes[*a].value.data();
                for ((x, &gy), &v) in slot(grads, *a, m * n).iter_mut().zip(g).zip(xd) {
                    if v > T::zero() {
                        *x += gy;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (pm, pw) = self.nodes[p].value.as_matrix();
                    let gp = slot(grads, p, pm * pw);
                    for r in 0..m {
                        add_into(&mut gp[r * pw..(r + 1) * pw], &g[r * n + offset..r * n + offset + pw]);
                    }
                    offset += pw;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    add_into(slot(grads, p, len), &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let len = self.nodes[*a].value.len();
                add_into(&mut slot(grads, *a, len)[start * n..start * n + m * n], g);
            }
            Op::SliceCols(a, start) => {
                let (am, an) = self.nodes[*a].value.as_matrix();
                let ga = slot(grads, *a, am * an);
                for r in 0..m {
                    add_into(&mut ga[r * an + start..r * an + start + n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::Embedding(table, indices) => {
                let len = self.nodes[*table].value.len();
                let gt = slot(grads, *table, len);
                for (r, &idx) in indices.iter().enumerate() {
                    add_into(&mut gt[idx * n..(idx + 1) * n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gd = self.nodes[*gamma].value.data();
                {
                    let gg = slot(grads, *gamma, n);
                    for r in 0..m {
                        for j in 0..n {
                            gg[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                }
                {
                    let gb = slot(grads, *beta, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
                let nn = T::of(n as f64);
                let gx = slot(grads, *x, m * n);
                let mut dxhat = vec![T::zero(); n];
                for r in 0..m {
                    let mut sum = T::zero();
                    let mut dot = T::zero();
                    for j in 0..n {
                        let d = g[r * n + j] * gd[j];
                        dxhat[j] = d;
                        sum += d;
                        dot += d * xhat[r * n + j];
                    }
                    let inv = inv_std[r];
                    for j in 0..n {
                        gx[r * n + j] += inv / nn * (nn * dxhat[j] - sum - xhat[r * n + j] * dot);
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let ga = slot(grads, *a, m * n);
                for r in 0..m {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..n {
                        ga[r * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                self.attention_backward(*q, *k, *v, *heads, probs, g, grads);
            }
            Op::CrossEntropy { logits, targets, active, probs, count } => {
                if *count == 0 {
                    return;
                }
                let (lm, k) = self.nodes[*logits].value.as_matrix();
                let scale = g[0] / T::of(*count as f64);
                let gl = slot(grads, *logits, lm * k);
                for r in 0..lm {
                    if !active[r] {
                        continue;
                    }
                    for j in 0..k {
                        let onehot = if j == targets[r] { T::one() } else { T::zero() };
                        gl[r * k + j] += scale * (probs[r * k + j] - onehot);
                    }
                }
            }
            Op::Sum(a) => {
                let len = self.nodes[*a].value.len();
                for x in slot(grads, *a, len).iter_mut() {
                    *x += g[0];
                }
            }
            Op::Mean(a) => {
                let len = self.nodes[*a].value.len();
                let s = g[0] / T::of(len as f64);
                for x in slot(grads, *a, len).iter_mut() {
                    *x += s;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(&self, q: usize, k: usize, v: usize, heads: usize, probs: &[T], g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (n, d) = self.nodes[q].value.as_matrix();
        let (m, _) = self.nodes[k].value.as_matrix();
        let (_, dv) = self.nodes[v].value.as_matrix();
        let (dh, dvh) = (d / heads, dv / heads);
        let scale = T::one() / T::of(dh as f64).sqrt();
        let qd = self.nodes[q].value.data();
        let kd = self.nodes[k].value.data();
        let vd = self.nodes[v].value.data();
        let mut gq = vec![T::zero(); n * d];
        let mut gk = vec![T::zero(); m * d];
        let mut gv = vec![T::zero(); m * dv];
        let mut ds = vec![T::zero(); m];
        for h in 0..heads {
            let p = &probs[h * n * m..(h + 1) * n * m];
            for i in 0..n {
                let gi = &g[i * dv + h * dvh..i * dv + (h + 1) * dvh];
                let mut dot = T::zero();
                for j in 0..m {
                    let vj = &vd[j * dv + h * dvh..j * dv + (h + 1) * dvh];
                    let dp: T = gi.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                    ds[j] = dp;
                    dot += dp * p[i * m + j];
                }
                for j in 0..m {
                    let pij = p[i * m + j];
                    if pij == T::zero() {
                        continue;
                    }
                    let s = pij * (ds[j] - dot) * scale;
                    for c in 0..dh {
                        gq[i * d + h * dh + c] += s * kd[j * d + h * dh + c];
                        gk[j * d + h * dh + c] += s * qd[i * d + h * dh + c];
                    }
                    for c in 0..dvh {
                        gv[j * dv + h * dvh + c] += pij * gi[c];
                    }
                }
            }
        }
        add_into(slot(grads, q, n * d), &gq);
        add_into(slot(grads, k, m * d), &gk);
        add_into(slot(grads, v, m * dv), &gv);
    }
}

/// Per-node gradients produced by [`Graph::gradients`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], idx: usize, len: usize) -> &mut [T] {
    grads[idx].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
