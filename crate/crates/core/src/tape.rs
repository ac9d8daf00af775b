//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a `1×1` output walks the record in reverse and
//! returns the gradient of that output with respect to every node that was
//! created with `requires_grad`. Everything is a 2-D matrix; scalars are
//! `1×1` and vectors are single rows.
//!
//! The op set is exactly what the recommender needs: dense and sparse
//! products, row gathers, layer normalization, causal multi-head attention,
//! L2 row normalization and softmax cross-entropy. The fused ops carry their
//! own backward passes and are checked against finite differences in the
//! test suite.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView1, Axis, Zip};

use crate::graph::NormalizedAdjacency;

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of a batch of sequences flattened to `batch * seq_len` rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq_len: usize,
    pub heads: usize,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Spmm(Arc<NormalizedAdjacency>, Var),
    Gather(Var, Arc<Vec<Option<usize>>>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    MaskRows(Var, Arc<Vec<f64>>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<f64>,
    },
    RowNormalize {
        x: Var,
        norms: Vec<f64>,
        eps: f64,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weight: f64,
        probs: Mat,
    },
    Sum(Var),
    DivScalar(Var, Var),
    MulScalar(Var, Var),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Drops every node created after `mark` (a previous [`Tape::len`]).
    /// Vars issued after the mark become invalid.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Mat) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.constant(Mat::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// `a + row`, broadcasting a `1×c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + &self.value(row).row(0);
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k), &[a])
    }

    /// `a * mul + add`, elementwise.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let value = self.value(a).mapv(|x| x * mul + add);
        self.push(value, Op::Affine(a, mul), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    /// `ln(1 + e^x)`, elementwise.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus);
        self.push(value, Op::Softplus(a), &[a])
    }

    /// Sparse-dense product `adj · a`.
    pub fn spmm(&mut self, adj: &Arc<NormalizedAdjacency>, a: Var) -> Var {
        let value = adj.spmm(self.value(a));
        self.push(value, Op::Spmm(Arc::clone(adj), a), &[a])
    }

    /// Row gather; `None` yields a zero row.
    pub fn gather(&mut self, a: Var, index: Arc<Vec<Option<usize>>>) -> Var {
        let src = self.value(a);
        let cols = src.ncols();
        let mut value = Mat::zeros((index.len(), cols));
        for (r, idx) in index.iter().enumerate() {
            if let Some(i) = *idx {
                value.row_mut(r).assign(&src.row(i));
            }
        }
        self.push(value, Op::Gather(a, index), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let index = Arc::new(rows.iter().copied().map(Some).collect());
        self.gather(a, index)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Multiplies row `r` by the constant `mask[r]`.
    pub fn mask_rows(&mut self, a: Var, mask: Arc<Vec<f64>>) -> Var {
        let mut value = self.value(a).clone();
        for (mut row, &m) in value.rows_mut().into_iter().zip(mask.iter()) {
            row *= m;
        }
        self.push(value, Op::MaskRows(a, mask), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Mat::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.mean().unwrap_or(0.0);
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap_or(0.0);
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            xhat.row_mut(r).assign(&row.mapv(|v| (v - mean) * is));
        }
        let value = &xhat * &self.value(gamma).row(0) + self.value(beta).row(0);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Causal multi-head scaled dot-product attention over already projected
    /// queries, keys and values laid out as `batch * seq_len` rows.
    ///
    /// Position `t` attends to keys at positions `<= t` whose `key_mask`
    /// entry is true. A query with no admissible key outputs a zero row.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        key_mask: &[bool],
    ) -> Var {
        let AttentionShape {
            batch,
            seq_len,
            heads,
        } = shape;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        assert_eq!(qv.nrows(), batch * seq_len, "attention: row count");
        assert_eq!(d % heads, 0, "attention: width not divisible by heads");
        assert_eq!(key_mask.len(), batch * seq_len, "attention: mask length");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; batch * heads * seq_len * seq_len];
        let mut out = Mat::zeros((batch * seq_len, d));
        let mut scores = vec![0.0; seq_len];
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for t in 0..seq_len {
                    let qrow = qv.slice(s![b * seq_len + t, cols.clone()]);
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..=t {
                        if key_mask[b * seq_len + j] {
                            let krow = kv.slice(s![b * seq_len + j, cols.clone()]);
                            scores[j] = qrow.dot(&krow) * scale;
                            max = max.max(scores[j]);
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let base = ((b * heads + h) * seq_len + t) * seq_len;
                    let mut z = 0.0;
                    for j in 0..=t {
                        if key_mask[b * seq_len + j] {
                            let e = (scores[j] - max).exp();
                            probs[base + j] = e;
                            z += e;
                        }
                    }
                    let mut orow = out.slice_mut(s![b * seq_len + t, cols.clone()]);
                    for j in 0..=t {
                        let p = probs[base + j] / z;
                        probs[base + j] = p;
                        if p != 0.0 {
                            orow.scaled_add(p, &vv.slice(s![b * seq_len + j, cols.clone()]));
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Scales every row to unit L2 norm; rows with norm below `eps` are
    /// divided by `eps` instead.
    pub fn row_normalize(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let norms: Vec<f64> = xv
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt().max(eps))
            .collect();
        let mut value = xv.clone();
        for (mut row, &n) in value.rows_mut().into_iter().zip(&norms) {
            row /= n;
        }
        self.push(value, Op::RowNormalize { x, norms, eps }, &[x])
    }

    /// `weight * Σ_i -log softmax(logits_i)[targets_i]` as a `1×1` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weight: f64) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "cross_entropy: target count");
        let mut probs = lv.clone();
        let mut total = 0.0;
        for (mut row, &t) in probs.rows_mut().into_iter().zip(&targets) {
            let lse = log_sum_exp(row.view());
            total += lse - row[t];
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let value = Mat::from_elem((1, 1), weight * total);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets,
                weight,
                probs,
            },
            &[logits],
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    /// `a / s` for a `1×1` node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        let value = self.value(a) / self.scalar(s);
        self.push(value, Op::DivScalar(a, s), &[a, s])
    }

    /// `a * s` for a `1×1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let value = self.value(a) * self.scalar(s);
        self.push(value, Op::MulScalar(a, s), &[a, s])
    }

    /// Sum of `1×1` nodes weighted by constants.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Var {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            let term = if w == 1.0 { v } else { self.scale(v, w) };
            acc = Some(match acc {
                None => term,
                Some(a) => self.add(a, term),
            });
        }
        acc.unwrap_or_else(|| self.scalar_constant(0.0))
    }

    /// Gradients of the `1×1` node `output` with respect to every node that
    /// requires them.
    pub fn backward(&self, output: Var) -> Grads {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::ones((1, 1)));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*row) {
                    self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, k) | Op::Affine(a, k) => self.accumulate(grads, *a, g * *k),
            Op::Sigmoid(a) => {
                let y = &node.value;
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(y)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                Zip::from(&mut d).and(x).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                Zip::from(&mut d).and(x).for_each(|d, &x| *d *= sigmoid(x));
                self.accumulate(grads, *a, d);
            }
            Op::Spmm(adj, a) => self.accumulate(grads, *a, adj.spmm_transpose(g)),
            Op::Gather(a, index) => {
                if self.wants(*a) {
                    let mut d = Mat::zeros(self.shape(*a));
                    for (r, idx) in index.iter().enumerate() {
                        if let Some(i) = *idx {
                            let mut row = d.row_mut(i);
                            row += &g.row(r);
                        }
                    }
                    self.accumulate(grads, *a, d);
                }
            }
            Op::SliceRows(a, start) => {
                if self.wants(*a) {
                    let mut d = Mat::zeros(self.shape(*a));
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                    self.accumulate(grads, *a, d);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.shape(*p).0;
                    if self.wants(*p) {
                        let d = g.slice(s![offset..offset + rows, ..]).to_owned();
                        self.accumulate(grads, *p, d);
                    }
                    offset += rows;
                }
            }
            Op::MaskRows(a, mask) => {
                let mut d = g.clone();
                for (mut row, &m) in d.rows_mut().into_iter().zip(mask.iter()) {
                    row *= m;
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value(*gamma).row(0);
                if self.wants(*gamma) {
                    let dg = (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *gamma, dg);
                }
                if self.wants(*beta) {
                    self.accumulate(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*x) {
                    let cols = g.ncols() as f64;
                    let mut dx = Mat::zeros(g.dim());
                    for (r, &is) in inv_std.iter().enumerate() {
                        let dxhat = &g.row(r) * &gam;
                        let xh = xhat.row(r);
                        let mean_d = dxhat.sum() / cols;
                        let mean_dx = dxhat.dot(&xh) / cols;
                        let mut out = dx.row_mut(r);
                        Zip::from(&mut out)
                            .and(&dxhat)
                            .and(&xh)
                            .for_each(|o, &d, &h| *o = is * (d - mean_d - h * mean_dx));
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => self.attention_backward(*q, *k, *v, *shape, probs, g, grads),
            Op::RowNormalize { x, norms, eps } => {
                let y = &node.value;
                let mut dx = Mat::zeros(g.dim());
                for (r, &n) in norms.iter().enumerate() {
                    let gr = g.row(r);
                    let mut out = dx.row_mut(r);
                    if n > *eps {
                        let yr = y.row(r);
                        let proj = yr.dot(&gr);
                        Zip::from(&mut out)
                            .and(&gr)
                            .and(&yr)
                            .for_each(|o, &g, &y| *o = (g - y * proj) / n);
                    } else {
                        out.assign(&(&gr / n));
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                weight,
                probs,
            } => {
                let scale = g[[0, 0]] * weight;
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d[[r, t]] -= 1.0;
                }
                d *= scale;
                self.accumulate(grads, *logits, d);
            }
            Op::Sum(a) => {
                let d = Mat::from_elem(self.shape(*a), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::DivScalar(a, sv) => {
                let s = self.scalar(*sv);
                if self.wants(*a) {
                    self.accumulate(grads, *a, g / s);
                }
                if self.wants(*sv) {
                    let ds = -(g * self.value(*a)).sum() / (s * s);
                    self.accumulate(grads, *sv, Mat::from_elem((1, 1), ds));
                }
            }
            Op::MulScalar(a, sv) => {
                let s = self.scalar(*sv);
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * s);
                }
                if self.wants(*sv) {
                    let ds = (g * self.value(*a)).sum();
                    self.accumulate(grads, *sv, Mat::from_elem((1, 1), ds));
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: &[f64],
        g: &Mat,
        grads: &mut [Option<Mat>],
    ) {
        let AttentionShape {
            batch,
            seq_len,
            heads,
        } = shape;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Mat::zeros(qv.dim());
        let mut dk = Mat::zeros(kv.dim());
        let mut dv = Mat::zeros(vv.dim());
        let mut dp = vec![0.0; seq_len];
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for t in 0..seq_len {
                    let base = ((b * heads + h) * seq_len + t) * seq_len;
                    let p = &probs[base..base + t + 1];
                    if p.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let go = g.slice(s![b * seq_len + t, cols.clone()]);
                    let mut weighted = 0.0;
                    for j in 0..=t {
                        if p[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vrow = vv.slice(s![b * seq_len + j, cols.clone()]);
                        dp[j] = go.dot(&vrow);
                        weighted += p[j] * dp[j];
                        dv.slice_mut(s![b * seq_len + j, cols.clone()])
                            .scaled_add(p[j], &go);
                    }
                    let qrow = qv.slice(s![b * seq_len + t, cols.clone()]);
                    for j in 0..=t {
                        if p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - weighted) * scale;
                        let krow = kv.slice(s![b * seq_len + j, cols.clone()]);
                        dq.slice_mut(s![b * seq_len + t, cols.clone()])
                            .scaled_add(ds, &krow);
                        dk.slice_mut(s![b * seq_len + j, cols.clone()])
                            .scaled_add(ds, &qrow);
                    }
                }
            }
        }
        self.accumulate(grads, q, dq);
        self.accumulate(grads, k, dk);
        self.accumulate(grads, v, dv);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

pub fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.mapv(|x| (x - max).exp()).sum().ln()
}
