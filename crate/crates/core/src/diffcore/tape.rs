use rayon::prelude::*;

use super::kernels::{dot, log_sum_exp, mm_nn, mm_nt, mm_tn, softmax_in_place, transpose};
use super::{DiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous block of rows processed as one attention sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    Dot(Var, Var),
    Sum(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        heads: usize,
        probs: Vec<Vec<f64>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Gelu(..) => "gelu",
            Op::LayerNorm { .. } => "layernorm",
            Op::Softmax { .. } => "softmax",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Dot(..) => "dot",
            Op::Sum(..) => "sum",
            Op::Gather { .. } => "embedding_gather",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Attention { .. } => "attention",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a computation, in topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        return Err(DiffError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize), DiffError> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(DiffError::NotAMatrix {
            op,
            shape: other.to_vec(),
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Trainable leaf: receives a gradient from [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Leaf, value, false)
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(op, value, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul", av)?;
        let (k2, n) = matrix_dims("matmul", bv)?;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = Tensor::new(vec![m, n], mm_nn(av.values(), bv.values(), m, k, n))?;
        self.push(Op::MatMul(a, b), out, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let av = self.value(a);
        let (m, n) = matrix_dims("transpose", av)?;
        let out = Tensor::new(vec![n, m], transpose(av.values(), m, n))?;
        self.push(Op::Transpose(a), out, &[a])
    }

    /// `x · wᵀ + b` with `w` stored as `[d_out × d_in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, DiffError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, d_in) = matrix_dims("linear", xv)?;
        let (d_out, d_in2) = matrix_dims("linear", wv)?;
        if d_in != d_in2 {
            return Err(DiffError::ShapeMismatch {
                op: "linear",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let mut out = mm_nt(xv.values(), wv.values(), n, d_in, d_out);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [d_out] {
                return Err(DiffError::ShapeMismatch {
                    op: "linear",
                    lhs: vec![d_out],
                    rhs: bv.shape().to_vec(),
                });
            }
            for row in out.chunks_mut(d_out) {
                for (o, bias) in row.iter_mut().zip(bv.values()) {
                    *o += bias;
                }
            }
        }
        let out = Tensor::new(vec![n, d_out], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Op::Linear { x, w, b }, out, &inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av, bv)?;
        let vals = av.values().iter().zip(bv.values()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), vals)?;
        self.push(Op::Add(a, b), out, &[a, b])
    }

    /// Adds a row vector `b[d]` to every row of `a[.. × d]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let d = av.row_len();
        if bv.shape() != [d] {
            return Err(DiffError::ShapeMismatch {
                op: "add_row",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut vals = av.values().to_vec();
        for row in vals.chunks_mut(d) {
            for (o, x) in row.iter_mut().zip(bv.values()) {
                *o += x;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), vals)?;
        self.push(Op::AddRow(a, b), out, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let vals = av.values().iter().zip(bv.values()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), vals)?;
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let av = self.value(a);
        let vals = av.values().iter().map(|x| x * c).collect();
        let out = Tensor::new(av.shape().to_vec(), vals)?;
        self.push(Op::Scale(a, c), out, &[a])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var, DiffError> {
        let av = self.value(a);
        let vals = av
            .values()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), vals)?;
        self.push(Op::Gelu(a), out, &[a])
    }

    /// Normalizes each row to zero mean and unit variance, then applies `γ`, `β`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, DiffError> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(DiffError::InvalidArgument("layernorm eps must be positive"));
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.row_len();
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(DiffError::ShapeMismatch {
                op: "layernorm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = xv.n_rows();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.rows() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(gv.values()[j] * h + bv.values()[j]);
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out,
            &[x, gamma, beta],
        )
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, DiffError> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() {
            return Err(DiffError::InvalidAxis {
                axis,
                ndim: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut vals = xv.values().to_vec();
        let mut buf = vec![0.0; axis_len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                for (a, slot) in buf.iter_mut().enumerate() {
                    *slot = vals[base + a * inner];
                }
                softmax_in_place(&mut buf);
                for (a, &p) in buf.iter().enumerate() {
                    vals[base + a * inner] = p;
                }
            }
        }
        let out = Tensor::new(shape.to_vec(), vals)?;
        self.push(
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            },
            out,
            &[x],
        )
    }

    /// Scales each row to unit ℓ2 norm. A zero row is an error.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var, DiffError> {
        let xv = self.value(x);
        let mut norms = Vec::with_capacity(xv.n_rows());
        let mut vals = Vec::with_capacity(xv.len());
        for row in xv.rows() {
            let n = dot(row, row).sqrt();
            if n == 0.0 {
                return Err(DiffError::NonFinite { op: "l2_normalize" });
            }
            norms.push(n);
            vals.extend(row.iter().map(|v| v / n));
        }
        let out = Tensor::new(xv.shape().to_vec(), vals)?;
        self.push(Op::L2Normalize { x, norms }, out, &[x])
    }

    /// Inner product of two equally shaped tensors, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("dot", av, bv)?;
        let out = Tensor::scalar(dot(av.values(), bv.values()));
        self.push(Op::Dot(a, b), out, &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = Tensor::scalar(self.value(a).values().iter().sum());
        self.push(Op::Sum(a), out, &[a])
    }

    /// Row lookup `table[ids[i]]`, also used to select rows of any matrix.
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, DiffError> {
        let tv = self.value(table);
        let (rows, d) = matrix_dims("embedding_gather", tv)?;
        if ids.is_empty() {
            return Err(DiffError::InvalidArgument("embedding_gather needs at least one id"));
        }
        let mut vals = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(DiffError::IndexOutOfRange { index: id, len: rows });
            }
            vals.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], vals)?;
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            out,
            &[table],
        )
    }

    /// Mean cross-entropy of logit rows against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, DiffError> {
        let lv = self.value(logits);
        let c = lv.row_len();
        let n = lv.n_rows();
        if targets.len() != n {
            return Err(DiffError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = Vec::with_capacity(lv.len());
        let mut total = 0.0;
        for (row, &t) in lv.rows().zip(targets) {
            if t >= c {
                return Err(DiffError::IndexOutOfRange { index: t, len: c });
            }
            let lse = log_sum_exp(row);
            total += lse - row[t];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let out = Tensor::scalar(total / n as f64);
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            out,
            &[logits],
        )
    }

    /// Multi-head scaled dot-product self-attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `[N × d]`; `segments` must tile the `N` rows in order.
    /// Rows attend only to rows of their own segment.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
    ) -> Result<Var, DiffError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        same_shape("attention", qv, kv)?;
        same_shape("attention", qv, vv)?;
        let (n, d) = matrix_dims("attention", qv)?;
        if heads == 0 || d % heads != 0 {
            return Err(DiffError::InvalidArgument("attention heads must divide the model width"));
        }
        let mut cursor = 0;
        for s in segments {
            if s.start != cursor || s.len == 0 {
                return Err(DiffError::InvalidArgument("attention segments must tile the rows"));
            }
            cursor += s.len;
        }
        if cursor != n {
            return Err(DiffError::InvalidArgument("attention segments must tile the rows"));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs) = (qv.values(), kv.values(), vv.values());

        let per_segment: Vec<(Vec<f64>, Vec<f64>)> = segments
            .par_iter()
            .map(|s| {
                let l = s.len;
                let mut probs = vec![0.0; heads * l * l];
                let mut out = vec![0.0; l * d];
                for h in 0..heads {
                    let off = h * dh;
                    for i in 0..l {
                        let qi = &qs[(s.start + i) * d + off..(s.start + i) * d + off + dh];
                        let p_row = &mut probs[(h * l + i) * l..(h * l + i + 1) * l];
                        for (j, p) in p_row.iter_mut().enumerate() {
                            let kj = &ks[(s.start + j) * d + off..(s.start + j) * d + off + dh];
                            *p = dot(qi, kj) * scale;
                        }
                        softmax_in_place(p_row);
                        let o_row = &mut out[i * d + off..i * d + off + dh];
                        for (j, &p) in p_row.iter().enumerate() {
                            let vj = &vs[(s.start + j) * d + off..(s.start + j) * d + off + dh];
                            for (o, x) in o_row.iter_mut().zip(vj) {
                                *o += p * x;
                            }
                        }
                    }
                }
                (probs, out)
            })
            .collect();

        let mut out = Vec::with_capacity(n * d);
        let mut probs = Vec::with_capacity(segments.len());
        for (p, o) in per_segment {
            out.extend(o);
            probs.push(p);
        }
        let out = Tensor::new(vec![n, d], out)?;
        self.push(
            Op::Attention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            out,
            &[q, k, v],
        )
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Every node that requires a gradient and feeds `loss` gets one; nodes
    /// that do not influence `loss` get a zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(DiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if node.requires_grad && slot.is_none() {
                *slot = Some(Tensor::zeros(node.value.shape()));
            }
            if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Vec<f64>) {
        if !self.needs(v) {
            return;
        }
        let shape = self.nodes[v.0].value.shape();
        let t = Tensor::new(shape.to_vec(), contrib).expect("gradient matches value shape");
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gv = g.values();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.needs(*a) {
                    self.accumulate(grads, *a, mm_nt(gv, bv.values(), m, n, k));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, mm_tn(av.values(), gv, k, m, n));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                self.accumulate(grads, *a, transpose(gv, m, n));
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, d_in) = (xv.shape()[0], xv.shape()[1]);
                let d_out = wv.shape()[0];
                if self.needs(*x) {
                    self.accumulate(grads, *x, mm_nn(gv, wv.values(), n, d_out, d_in));
                }
                if self.needs(*w) {
                    self.accumulate(grads, *w, mm_tn(gv, xv.values(), d_out, n, d_in));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut db = vec![0.0; d_out];
                        for row in gv.chunks(d_out) {
                            for (acc, x) in db.iter_mut().zip(row) {
                                *acc += x;
                            }
                        }
                        self.accumulate(grads, *b, db);
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gv.to_vec());
                self.accumulate(grads, *b, gv.to_vec());
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, gv.to_vec());
                if self.needs(*b) {
                    let d = g.row_len();
                    let mut db = vec![0.0; d];
                    for row in gv.chunks(d) {
                        for (acc, x) in db.iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let da = gv.iter().zip(bv.values()).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = gv.iter().zip(av.values()).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, gv.iter().map(|g| g * c).collect());
            }
            Op::Gelu(a) => {
                let xs = self.value(*a).values();
                let da = xs
                    .iter()
                    .zip(gv)
                    .map(|(&x, &g)| {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value(*gamma).values();
                let d = gam.len();
                if self.needs(*gamma) {
                    let mut dg = vec![0.0; d];
                    for (grow, hrow) in gv.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                    self.accumulate(grads, *gamma, dg);
                }
                if self.needs(*beta) {
                    let mut db = vec![0.0; d];
                    for grow in gv.chunks(d) {
                        for (acc, x) in db.iter_mut().zip(grow) {
                            *acc += x;
                        }
                    }
                    self.accumulate(grads, *beta, db);
                }
                if self.needs(*x) {
                    let mut dx = Vec::with_capacity(gv.len());
                    for ((grow, hrow), &inv) in gv.chunks(d).zip(xhat.chunks(d)).zip(inv_std) {
                        let dh: Vec<f64> = grow.iter().zip(gam).map(|(g, w)| g * w).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dot(&dh, hrow);
                        for j in 0..d {
                            dx.push(
                                inv / d as f64 * (d as f64 * dh[j] - sum_dh - hrow[j] * sum_dh_h),
                            );
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            } => {
                let y = node.value.values();
                let mut dx = vec![0.0; y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let base = o * axis_len * inner + i;
                        let s: f64 = (0..*axis_len)
                            .map(|a| gv[base + a * inner] * y[base + a * inner])
                            .sum();
                        for a in 0..*axis_len {
                            let p = base + a * inner;
                            dx[p] = y[p] * (gv[p] - s);
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::L2Normalize { x, norms } => {
                let y = node.value.values();
                let d = node.value.row_len();
                let mut dx = Vec::with_capacity(y.len());
                for ((yrow, grow), &n) in y.chunks(d).zip(gv.chunks(d)).zip(norms) {
                    let yg = dot(yrow, grow);
                    dx.extend(yrow.iter().zip(grow).map(|(yj, gj)| (gj - yj * yg) / n));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Dot(a, b) => {
                let s = gv[0];
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, bv.values().iter().map(|y| s * y).collect());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, av.values().iter().map(|x| s * x).collect());
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gv[0]; n]);
            }
            Op::Gather { table, ids } => {
                if self.needs(*table) {
                    let tv = self.value(*table);
                    let d = tv.row_len();
                    let mut dt = vec![0.0; tv.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += gv[r * d + j];
                        }
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.value(*logits).row_len();
                let n = targets.len() as f64;
                let s = gv[0] / n;
                let mut dl: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * c + t] -= s;
                }
                self.accumulate(grads, *logits, dl);
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => {
                let (qs, ks, vs) = (
                    self.value(*q).values(),
                    self.value(*k).values(),
                    self.value(*v).values(),
                );
                let d = node.value.row_len();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = segments
                    .par_iter()
                    .zip(probs.par_iter())
                    .map(|(s, p)| {
                        let l = s.len;
                        let mut dq = vec![0.0; l * d];
                        let mut dk = vec![0.0; l * d];
                        let mut dv = vec![0.0; l * d];
                        let mut dp = vec![0.0; l];
                        for h in 0..*heads {
                            let off = h * dh;
                            for i in 0..l {
                                let gi = &gv[(s.start + i) * d + off..(s.start + i) * d + off + dh];
                                let p_row = &p[(h * l + i) * l..(h * l + i + 1) * l];
                                for j in 0..l {
                                    let vj =
                                        &vs[(s.start + j) * d + off..(s.start + j) * d + off + dh];
                                    dp[j] = dot(gi, vj);
                                    let pij = p_row[j];
                                    for (acc, x) in
                                        dv[j * d + off..j * d + off + dh].iter_mut().zip(gi)
                                    {
                                        *acc += pij * x;
                                    }
                                }
                                let mix = dot(p_row, &dp);
                                let qi = &qs[(s.start + i) * d + off..(s.start + i) * d + off + dh];
                                for j in 0..l {
                                    let ds = p_row[j] * (dp[j] - mix) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    let kj =
                                        &ks[(s.start + j) * d + off..(s.start + j) * d + off + dh];
                                    for (acc, x) in
                                        dq[i * d + off..i * d + off + dh].iter_mut().zip(kj)
                                    {
                                        *acc += ds * x;
                                    }
                                    for (acc, x) in
                                        dk[j * d + off..j * d + off + dh].iter_mut().zip(qi)
                                    {
                                        *acc += ds * x;
                                    }
                                }
                            }
                        }
                        (dq, dk, dv)
                    })
                    .collect();
                let n = node.value.n_rows();
                let mut dq = Vec::with_capacity(n * d);
                let mut dk = Vec::with_capacity(n * d);
                let mut dv = Vec::with_capacity(n * d);
                for (a, b, c) in parts {
                    dq.extend(a);
                    dk.extend(b);
                    dv.extend(c);
                }
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
        }
    }
}
