use std::ops::Range;
use std::sync::Arc;

use crate::autodiff::{OpKind, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which earlier rows each query row of a packed batch may attend to.
///
/// Row `i` lists its key rows in ascending order, itself included. A plain
/// causal sequence of length `n` gives row `i` the keys `0..=i`; packed
/// batches share context rows between several answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionLayout {
    keys: Vec<Vec<usize>>,
}

impl AttentionLayout {
    pub fn new(keys: Vec<Vec<usize>>) -> Result<Self, TensorError> {
        for (row, list) in keys.iter().enumerate() {
            let ascending = list.windows(2).all(|w| w[0] < w[1]);
            if list.last() != Some(&row) || !ascending {
                return Err(TensorError::Layout { row });
            }
        }
        Ok(Self { keys })
    }

    /// Strictly causal layout over one sequence of `len` rows.
    pub fn causal(len: usize) -> Self {
        Self {
            keys: (0..len).map(|i| (0..=i).collect()).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.keys.len()
    }

    pub fn keys(&self, row: usize) -> &[usize] {
        &self.keys[row]
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    MulConst(Var, Vec<S>),
    Sigmoid(Var),
    LogSigmoid(Var),
    Gelu(Var),
    GatherRows(Var, Vec<usize>),
    Select(Var, Vec<usize>),
    SegmentSum(Var, Vec<Range<usize>>),
    Sum(Var),
    Mean(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<S>,
        inv_std: Vec<S>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: Arc<AttentionLayout>,
        probs: Vec<S>,
    },
}

impl<S> Op<S> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::MulConst(..) => OpKind::MulConst,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::LogSigmoid(..) => OpKind::LogSigmoid,
            Op::Gelu(..) => OpKind::Gelu,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::Select(..) => OpKind::Select,
            Op::SegmentSum(..) => OpKind::SegmentSum,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Attention { .. } => OpKind::Attention,
        }
    }
}

#[derive(Debug, Clone)]
struct Node<S> {
    tensor: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Dynamic computation tape for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node vector is already a
/// topological order of the graph and [`Tape::backward`] walks it in reverse.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    fault: Option<OpKind>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_COEFF: f64 = 0.044_715;

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Makes the backward rule of `kind` deliberately wrong.
    ///
    /// Negative control for the gradient-check harness; never set in training.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, shape: Vec<usize>, values: Vec<S>) -> Result<Var, TensorError> {
        let tensor = Tensor::new(shape, values)?;
        Ok(self.push(tensor, Op::Leaf, true))
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<S>) -> Result<Var, TensorError> {
        let tensor = Tensor::new(shape, values)?;
        Ok(self.push(tensor, Op::Leaf, false))
    }

    pub fn tensor(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].tensor
    }

    pub fn value(&self, v: Var) -> &[S] {
        self.nodes[v.0].tensor.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> &[S] {
        self.nodes[v.0].tensor.grad()
    }

    pub fn item(&self, v: Var) -> S {
        self.nodes[v.0].tensor.item()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.tensor.zero_grad());
    }

    fn push(&mut self, tensor: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            tensor,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, shape: Vec<usize>, values: Vec<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(
            Tensor::from_parts_unchecked(shape, values),
            op,
            requires_grad,
        )
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: self.shape(v).to_vec(),
            }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Var {
        let shape = self.shape(a).to_vec();
        let values = self.value(a).iter().map(|&x| f(x)).collect();
        self.record(shape, values, op, &[a])
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op<S>,
        f: impl Fn(S, S) -> S,
    ) -> Result<Var, TensorError> {
        self.same_shape(a, b, name)?;
        let shape = self.shape(a).to_vec();
        let values = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.record(shape, values, op, &[a, b]))
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for (p, &x) in av[i * k..(i + 1) * k].iter().enumerate() {
                if x == S::zero() {
                    continue;
                }
                for (o, &y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o = *o + x * y;
                }
            }
        }
        Ok(self.record(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`n` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let n = self.tensor(a).last_dim();
        if self.shape(row) != [n] {
            return Err(TensorError::Shape {
                op: "add_row",
                left: self.shape(a).to_vec(),
                right: self.shape(row).to_vec(),
            });
        }
        let shape = self.shape(a).to_vec();
        let rv = self.value(row);
        let values = self
            .value(a)
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &b)| x + b))
            .collect();
        Ok(self.record(shape, values, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// Elementwise product with a constant (non-differentiated) vector.
    pub fn mul_const(&mut self, a: Var, c: Vec<S>) -> Result<Var, TensorError> {
        if c.len() != self.tensor(a).numel() {
            return Err(TensorError::Shape {
                op: "mul_const",
                left: self.shape(a).to_vec(),
                right: vec![c.len()],
            });
        }
        let shape = self.shape(a).to_vec();
        let values = self.value(a).iter().zip(&c).map(|(&x, &y)| x * y).collect();
        Ok(self.record(shape, values, Op::MulConst(a, c), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), Scalar::sigmoid)
    }

    /// `ln σ(x)` via `-softplus(-x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), Scalar::log_sigmoid)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Gelu(a), |x| {
            let (t, _) = gelu_parts(x);
            S::lit(0.5) * x * (S::one() + t)
        })
    }

    /// Picks rows of a matrix by index (embedding lookup when `a` is a table).
    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims(a, "gather_rows")?;
        if ids.is_empty() {
            return Err(TensorError::Empty { op: "gather_rows" });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(TensorError::Index {
                op: "gather_rows",
                index: bad,
                bound: r,
            });
        }
        let av = self.value(a);
        let mut values = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            values.extend_from_slice(&av[i * c..(i + 1) * c]);
        }
        Ok(self.record(
            vec![ids.len(), c],
            values,
            Op::GatherRows(a, ids.to_vec()),
            &[a],
        ))
    }

    /// Picks elements by flat index into a 1-D tensor.
    pub fn select(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let n = self.tensor(a).numel();
        if indices.is_empty() {
            return Err(TensorError::Empty { op: "select" });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::Index {
                op: "select",
                index: bad,
                bound: n,
            });
        }
        let av = self.value(a);
        let values = indices.iter().map(|&i| av[i]).collect();
        Ok(self.record(
            vec![indices.len()],
            values,
            Op::Select(a, indices.to_vec()),
            &[a],
        ))
    }

    /// Picks `a[row, col]` for each pair of a matrix.
    pub fn pick(&mut self, a: Var, cells: &[(usize, usize)]) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims(a, "pick")?;
        let mut flat = Vec::with_capacity(cells.len());
        for &(row, col) in cells {
            if row >= r || col >= c {
                return Err(TensorError::Index {
                    op: "pick",
                    index: row * c + col,
                    bound: r * c,
                });
            }
            flat.push(row * c + col);
        }
        self.select(a, &flat)
    }

    /// Sums contiguous ranges of a flat tensor, one output per range.
    pub fn segment_sum(&mut self, a: Var, segments: &[Range<usize>]) -> Result<Var, TensorError> {
        let n = self.tensor(a).numel();
        if segments.is_empty() {
            return Err(TensorError::Empty { op: "segment_sum" });
        }
        if let Some(bad) = segments.iter().find(|s| s.end > n || s.is_empty()) {
            return Err(TensorError::Index {
                op: "segment_sum",
                index: bad.end,
                bound: n,
            });
        }
        let av = self.value(a);
        let values = segments
            .iter()
            .map(|s| av[s.clone()].iter().fold(S::zero(), |acc, &x| acc + x))
            .collect();
        Ok(self.record(
            vec![segments.len()],
            values,
            Op::SegmentSum(a, segments.to_vec()),
            &[a],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().fold(S::zero(), |acc, &x| acc + x);
        self.record(vec![1], vec![total], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = S::from_usize(self.tensor(a).numel()).expect("length fits the scalar type");
        let total = self.value(a).iter().fold(S::zero(), |acc, &x| acc + x);
        self.record(vec![1], vec![total / n], Op::Mean(a), &[a])
    }

    /// Max-shifted log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        if self.value(a).iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: "log_softmax" });
        }
        let v = self.tensor(a).last_dim();
        let shape = self.shape(a).to_vec();
        let mut values = Vec::with_capacity(self.tensor(a).numel());
        for row in self.value(a).chunks(v) {
            let max = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let denom = row.iter().fold(S::zero(), |acc, &x| acc + (x - max).exp());
            let log_z = max + denom.ln();
            values.extend(row.iter().map(|&x| x - log_z));
        }
        Ok(self.record(shape, values, Op::LogSoftmax(a), &[a]))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var, TensorError> {
        let n = self.tensor(x).last_dim();
        for p in [gain, bias] {
            if self.shape(p) != [n] {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    left: self.shape(x).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let nf = S::from_usize(n).expect("width fits the scalar type");
        let shape = self.shape(x).to_vec();
        let g = self.value(gain);
        let b = self.value(bias);
        let rows = self.tensor(x).rows();
        let mut normalized = Vec::with_capacity(rows * n);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * n);
        for row in self.value(x).chunks(n) {
            let mean = row.iter().fold(S::zero(), |acc, &v| acc + v) / nf;
            let var = row
                .iter()
                .fold(S::zero(), |acc, &v| acc + (v - mean) * (v - mean))
                / nf;
            let rstd = S::one() / (var + eps).sqrt();
            inv_std.push(rstd);
            for j in 0..n {
                let xh = (row[j] - mean) * rstd;
                normalized.push(xh);
                out.push(xh * g[j] + b[j]);
            }
        }
        Ok(self.record(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Multi-head scaled dot-product attention over a packed row layout.
    ///
    /// `q`, `k`, `v` are `[rows × d_model]`; heads split the columns evenly.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: Arc<AttentionLayout>,
    ) -> Result<Var, TensorError> {
        let (rows, d) = self.matrix_dims(q, "attention")?;
        self.same_shape(q, k, "attention")?;
        self.same_shape(q, v, "attention")?;
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Heads { width: d, heads });
        }
        if layout.rows() != rows {
            return Err(TensorError::Shape {
                op: "attention",
                left: vec![rows, d],
                right: vec![layout.rows()],
            });
        }
        let dh = d / heads;
        let scale = S::one() / S::from_usize(dh).expect("head width fits").sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![S::zero(); rows * d];
        let mut probs = Vec::new();
        let mut scores = Vec::new();
        for i in 0..rows {
            let keys = layout.keys(i);
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qi = &qv[i * d + cols.start..i * d + cols.end];
                scores.clear();
                let mut max = S::neg_infinity();
                for &j in keys {
                    let kj = &kv[j * d + cols.start..j * d + cols.end];
                    let s = dot(qi, kj) * scale;
                    max = max.max(s);
                    scores.push(s);
                }
                let mut denom = S::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom = denom + *s;
                }
                let oi = &mut out[i * d + cols.start..i * d + cols.end];
                for (&j, &s) in keys.iter().zip(&scores) {
                    let p = s / denom;
                    probs.push(p);
                    let vj = &vv[j * d + cols.start..j * d + cols.end];
                    for (o, &x) in oi.iter_mut().zip(vj) {
                        *o = *o + p * x;
                    }
                }
            }
        }
        Ok(self.record(
            vec![rows, d],
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Accumulates `∂root/∂t` into every tensor `t` reachable from `root`.
    ///
    /// Each call runs a fresh pass and adds its result to the stored
    /// gradients, so calling twice without [`Tape::zero_grad`] doubles them.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if !self.tensor(root).is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: self.shape(root).to_vec(),
            });
        }
        let mut bufs: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        bufs[root.0] = Some(vec![S::one()]);
        for idx in (0..=root.0).rev() {
            let Some(mut g) = bufs[idx].take() else {
                continue;
            };
            let node = &mut self.nodes[idx];
            for (acc, &x) in node.tensor.grad_mut().iter_mut().zip(&g) {
                *acc = *acc + x;
            }
            if !node.requires_grad {
                continue;
            }
            if self.fault == Some(self.nodes[idx].op.kind()) {
                g.iter_mut().for_each(|x| *x = *x * S::lit(1.5));
            }
            self.propagate(idx, &g, &mut bufs);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[S], bufs: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[idx];
        let out = node.tensor.values();
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(nodes[a.0].tensor.shape());
                let n = nodes[b.0].tensor.last_dim();
                let av = nodes[a.0].tensor.values();
                let bv = nodes[b.0].tensor.values();
                if let Some(ga) = slot(nodes, bufs, *a) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] = ga[i * k + p] + dot(gi, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if let Some(gb) = slot(nodes, bufs, *b) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == S::zero() {
                                continue;
                            }
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *o = *o + x * y;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    axpy(ga, g, S::one());
                }
                if let Some(gb) = slot(nodes, bufs, *b) {
                    axpy(gb, g, S::one());
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    axpy(ga, g, S::one());
                }
                if let Some(gb) = slot(nodes, bufs, *b) {
                    axpy(gb, g, -S::one());
                }
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].tensor.values();
                let bv = nodes[b.0].tensor.values();
                if let Some(ga) = slot(nodes, bufs, *a) {
                    for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o = *o + gi * y;
                    }
                }
                if let Some(gb) = slot(nodes, bufs, *b) {
                    for ((o, &gi), &x) in gb.iter_mut().zip(g).zip(av) {
                        *o = *o + gi * x;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    axpy(ga, g, S::one());
                }
                if let Some(gr) = slot(nodes, bufs, *row) {
                    let n = gr.len();
                    for chunk in g.chunks(n) {
                        axpy(gr, chunk, S::one());
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    axpy(ga, g, *c);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    axpy(ga, g, S::one());
                }
            }
            Op::MulConst(a, c) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    for ((o, &gi), &ci) in ga.iter_mut().zip(g).zip(c) {
                        *o = *o + gi * ci;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    for ((o, &gi), &s) in ga.iter_mut().zip(g).zip(out) {
                        *o = *o + gi * s * (S::one() - s);
                    }
                }
            }
            Op::LogSigmoid(a) => {
                let av = nodes[a.0].tensor.values();
                if let Some(ga) = slot(nodes, bufs, *a) {
                    for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(av) {
                        *o = *o + gi * (-x).sigmoid();
                    }
                }
            }
            Op::Gelu(a) => {
                let av = nodes[a.0].tensor.values();
                if let Some(ga) = slot(nodes, bufs, *a) {
                    for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(av) {
                        let (t, du) = gelu_parts(x);
                        let half = S::lit(0.5);
                        let d = half * (S::one() + t) + half * x * (S::one() - t * t) * du;
                        *o = *o + gi * d;
                    }
                }
            }
            Op::GatherRows(a, ids) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    let c = g.len() / ids.len();
                    for (r, &i) in ids.iter().enumerate() {
                        axpy(
                            &mut ga[i * c..(i + 1) * c],
                            &g[r * c..(r + 1) * c],
                            S::one(),
                        );
                    }
                }
            }
            Op::Select(a, indices) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    for (&i, &gi) in indices.iter().zip(g) {
                        ga[i] = ga[i] + gi;
                    }
                }
            }
            Op::SegmentSum(a, segments) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    for (seg, &gi) in segments.iter().zip(g) {
                        for o in &mut ga[seg.clone()] {
                            *o = *o + gi;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    ga.iter_mut().for_each(|o| *o = *o + g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    let n = S::from_usize(ga.len()).expect("length fits");
                    let share = g[0] / n;
                    ga.iter_mut().for_each(|o| *o = *o + share);
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(ga) = slot(nodes, bufs, *a) {
                    let v = node.tensor.last_dim();
                    for ((grow, orow), lrow) in ga.chunks_mut(v).zip(g.chunks(v)).zip(out.chunks(v))
                    {
                        let total = orow.iter().fold(S::zero(), |s, &x| s + x);
                        for ((o, &gi), &lp) in grow.iter_mut().zip(orow).zip(lrow) {
                            *o = *o + (gi - lp.exp() * total);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let n = node.tensor.last_dim();
                let nf = S::from_usize(n).expect("width fits");
                let gv = nodes[gain.0].tensor.values();
                if let Some(gg) = slot(nodes, bufs, *gain) {
                    for (grow, xrow) in g.chunks(n).zip(normalized.chunks(n)) {
                        for ((o, &gi), &xh) in gg.iter_mut().zip(grow).zip(xrow) {
                            *o = *o + gi * xh;
                        }
                    }
                }
                if let Some(gb) = slot(nodes, bufs, *bias) {
                    for grow in g.chunks(n) {
                        axpy(gb, grow, S::one());
                    }
                }
                if let Some(gx) = slot(nodes, bufs, *x) {
                    let mut dxh = vec![S::zero(); n];
                    for (r, (grow, xrow)) in g.chunks(n).zip(normalized.chunks(n)).enumerate() {
                        let mut mean_d = S::zero();
                        let mut mean_dx = S::zero();
                        for j in 0..n {
                            dxh[j] = grow[j] * gv[j];
                            mean_d = mean_d + dxh[j];
                            mean_dx = mean_dx + dxh[j] * xrow[j];
                        }
                        mean_d = mean_d / nf;
                        mean_dx = mean_dx / nf;
                        let rstd = inv_std[r];
                        for j in 0..n {
                            let o = &mut gx[r * n + j];
                            *o = *o + rstd * (dxh[j] - mean_d - xrow[j] * mean_dx);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
            } => {
                let (rows, d) = dims2(node.tensor.shape());
                let dh = d / heads;
                let scale = S::one() / S::from_usize(dh).expect("head width fits").sqrt();
                let (qv, kv, vv) = (
                    nodes[q.0].tensor.values(),
                    nodes[k.0].tensor.values(),
                    nodes[v.0].tensor.values(),
                );
                let mut gq = vec![S::zero(); rows * d];
                let mut gk = vec![S::zero(); rows * d];
                let mut gvv = vec![S::zero(); rows * d];
                let mut dp = Vec::new();
                let mut cursor = 0;
                for i in 0..rows {
                    let keys = layout.keys(i);
                    for h in 0..*heads {
                        let lo = h * dh;
                        let gi = &g[i * d + lo..i * d + lo + dh];
                        let p = &probs[cursor..cursor + keys.len()];
                        cursor += keys.len();
                        dp.clear();
                        let mut weighted = S::zero();
                        for (&j, &pj) in keys.iter().zip(p) {
                            let vj = &vv[j * d + lo..j * d + lo + dh];
                            let dpj = dot(gi, vj);
                            weighted = weighted + pj * dpj;
                            dp.push(dpj);
                            axpy(&mut gvv[j * d + lo..j * d + lo + dh], gi, pj);
                        }
                        for ((&j, &pj), &dpj) in keys.iter().zip(p).zip(&dp) {
                            let ds = pj * (dpj - weighted) * scale;
                            if ds == S::zero() {
                                continue;
                            }
                            let (qi, kj) = (
                                &qv[i * d + lo..i * d + lo + dh],
                                &kv[j * d + lo..j * d + lo + dh],
                            );
                            axpy(&mut gq[i * d + lo..i * d + lo + dh], kj, ds);
                            axpy(&mut gk[j * d + lo..j * d + lo + dh], qi, ds);
                        }
                    }
                }
                for (var, local) in [(*q, gq), (*k, gk), (*v, gvv)] {
                    if let Some(buf) = slot(nodes, bufs, var) {
                        axpy(buf, &local, S::one());
                    }
                }
            }
        }
    }
}

fn slot<'b, S: Scalar>(
    nodes: &[Node<S>],
    bufs: &'b mut [Option<Vec<S>>],
    v: Var,
) -> Option<&'b mut Vec<S>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].tensor.numel();
    Some(bufs[v.0].get_or_insert_with(|| vec![S::zero(); len]))
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn axpy<S: Scalar>(y: &mut [S], x: &[S], a: S) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o = *o + a * v;
    }
}

/// Returns `tanh(u)` and `du/dx` for the GELU inner argument `u`.
fn gelu_parts<S: Scalar>(x: S) -> (S, S) {
    let c = S::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = S::lit(GELU_COEFF);
    let u = c * (x + a * x * x * x);
    (u.tanh(), c * (S::one() + S::lit(3.0) * a * x * x))
}
