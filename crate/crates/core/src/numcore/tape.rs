//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every primitive applied during a forward pass together
//! with whatever the backward rule needs. [`Tape::backward`] walks the record in
//! exact reverse order and accumulates gradients additively, so a value consumed
//! by several operations receives the sum of its branch gradients.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{check_finite, gemm_nn, gemm_nt, gemm_tn, Matrix};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            // relu'(0) = 0
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fixed sparse row operator: `out[v] = Σ_j w_vj · x[u_j]`.
///
/// Terms of each output row are summed in an order determined by the term
/// values themselves (weight, then the source row lexicographically), so the
/// result does not depend on how nodes are numbered.
#[derive(Clone, Debug)]
pub struct SparseAggregator {
    n: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseAggregator {
    /// Unit-weight neighbor sum.
    pub fn neighbor_sum(neighbors: &[Vec<usize>]) -> Self {
        let rows = neighbors
            .iter()
            .map(|ns| ns.iter().map(|&u| (u, 1.0)).collect())
            .collect::<Vec<Vec<_>>>();
        Self::weighted(rows)
    }

    pub fn weighted(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in rows {
            for (u, w) in row {
                debug_assert!(u < n);
                indices.push(u);
                weights.push(w);
            }
            offsets.push(indices.len());
        }
        Self {
            n,
            offsets,
            indices,
            weights,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub(crate) fn apply(&self, x: &Matrix) -> Matrix {
        let d = x.cols();
        let mut out = Matrix::zeros(self.n, d);
        let mut order: Vec<usize> = Vec::new();
        let dst = out.as_mut_slice();
        for v in 0..self.n {
            let (lo, hi) = (self.offsets[v], self.offsets[v + 1]);
            order.clear();
            order.extend(lo..hi);
            order.sort_unstable_by(|&a, &b| {
                self.weights[a]
                    .total_cmp(&self.weights[b])
                    .then_with(|| cmp_rows(x.row(self.indices[a]), x.row(self.indices[b])))
            });
            let orow = &mut dst[v * d..(v + 1) * d];
            for &t in &order {
                let w = self.weights[t];
                let src = x.row(self.indices[t]);
                for (o, &s) in orow.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        out
    }

    fn apply_transpose(&self, g: &Matrix, acc: &mut Matrix) {
        let d = g.cols();
        let dst = acc.as_mut_slice();
        for v in 0..self.n {
            let grow = g.row(v);
            for t in self.offsets[v]..self.offsets[v + 1] {
                let u = self.indices[t];
                let w = self.weights[t];
                for (o, &gv) in dst[u * d..(u + 1) * d].iter_mut().zip(grow) {
                    *o += w * gv;
                }
            }
        }
    }
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddBias { x: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Activate { x: Var, kind: Activation },
    RowSoftmax { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    Aggregate { x: Var, agg: Arc<SparseAggregator> },
    SelfScaleAdd { h: Var, eps: Var, agg: Var },
    ConcatCols { parts: Vec<Var> },
    Column { x: Var, j: usize },
    ScaleRows { x: Var, c: Var },
    Hadamard { a: Var, b: Var },
    GatherRows { x: Var, idx: Vec<usize> },
    Clamp { x: Var, lo: f64, hi: f64 },
    Bce { p: Var, labels: Vec<f64> },
    BceLogits { z: Var, labels: Vec<f64> },
    SumSquares { x: Var },
}

struct Node {
    value: Arc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Single-threaded record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tape value that requires one.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient, or zeros of the given shape when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Matrix>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &str, value: Matrix, op: Op, requires_grad: bool) -> Result<Var> {
        let value = check_finite(name, value)?;
        Ok(self.push(value, op, requires_grad))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient (features, fixed weights).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Constant input shared with the caller without copying.
    pub fn constant_shared(&mut self, value: Arc<Matrix>) -> Var {
        self.push_shared(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// `x·w + b` with `b` a `1×m` row broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, d) = self.shape(x);
        let (d2, m) = self.shape(w);
        if d != d2 {
            return Err(Error::shape("affine", (n, d), (d2, m)));
        }
        if let Some(b) = b {
            if self.shape(b) != (1, m) {
                return Err(Error::shape("affine bias", (1, m), self.shape(b)));
            }
        }
        let mut out = Matrix::zeros(n, m);
        if let Some(b) = b {
            let bias = self.value(b).as_slice();
            for row in out.as_mut_slice().chunks_mut(m.max(1)) {
                row.copy_from_slice(bias);
            }
        }
        gemm_nn(
            self.value(x).as_slice(),
            self.value(w).as_slice(),
            out.as_mut_slice(),
            n,
            d,
            m,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push_checked("affine", out, Op::Affine { x, w, b }, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", va.shape(), vb.shape()));
        }
        let data = va.as_slice().iter().zip(vb.as_slice()).map(|(x, y)| x + y).collect();
        let out = Matrix::from_vec_unchecked(va.rows(), va.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("add", out, Op::Add { a, b }, rg)
    }

    /// `x + b` with `b` a `1×m` row broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.shape() != (1, vx.cols()) {
            return Err(Error::shape("add_bias", vx.shape(), vb.shape()));
        }
        let m = vx.cols().max(1);
        let bias = vb.as_slice();
        let data = vx
            .as_slice()
            .chunks(m)
            .flat_map(|row| row.iter().zip(bias).map(|(a, c)| a + c))
            .collect();
        let out = Matrix::from_vec_unchecked(vx.rows(), vx.cols(), data);
        let rg = self.rg(x) || self.rg(b);
        self.push_checked("add_bias", out, Op::AddBias { x, b }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = self.value(x);
        let data = v.as_slice().iter().map(|a| a * factor).collect();
        let out = Matrix::from_vec_unchecked(v.rows(), v.cols(), data);
        let rg = self.rg(x);
        self.push_checked("scale", out, Op::Scale { x, factor }, rg)
    }

    pub fn activate(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = self.value(x).map(|v| kind.apply(v))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Activate { x, kind }, rg))
    }

    /// Softmax across each row, stabilized by subtracting the row maximum.
    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let out = softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push_checked("row_softmax", out, Op::RowSoftmax { x }, rg)
    }

    /// Inverted dropout. Evaluation mode (or `rate == 0`) is the identity and
    /// records nothing.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let v = self.value(x);
        let mask: Vec<f64> = (0..v.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = v.as_slice().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Matrix::from_vec_unchecked(v.rows(), v.cols(), data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    pub fn aggregate(&mut self, x: Var, agg: &Arc<SparseAggregator>) -> Result<Var> {
        let v = self.value(x);
        if v.rows() != agg.node_count() {
            return Err(Error::shape("aggregate", v.shape(), (agg.node_count(), v.cols())));
        }
        let out = agg.apply(v);
        let rg = self.rg(x);
        self.push_checked(
            "aggregate",
            out,
            Op::Aggregate {
                x,
                agg: Arc::clone(agg),
            },
            rg,
        )
    }

    /// `(1 + eps)·h + agg` with `eps` a `1×1` value.
    pub fn self_scale_add(&mut self, h: Var, eps: Var, agg: Var) -> Result<Var> {
        if self.shape(eps) != (1, 1) {
            return Err(Error::shape("self_scale_add eps", (1, 1), self.shape(eps)));
        }
        let (vh, va) = (self.value(h), self.value(agg));
        if vh.shape() != va.shape() {
            return Err(Error::shape("self_scale_add", vh.shape(), va.shape()));
        }
        let factor = 1.0 + self.value(eps).get(0, 0);
        let data = vh
            .as_slice()
            .iter()
            .zip(va.as_slice())
            .map(|(a, s)| factor * a + s)
            .collect();
        let out = Matrix::from_vec_unchecked(vh.rows(), vh.cols(), data);
        let rg = self.rg(h) || self.rg(eps) || self.rg(agg);
        self.push_checked("self_scale_add", out, Op::SelfScaleAdd { h, eps, agg }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hconcat(&mats)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let v = self.value(x);
        if j >= v.cols() {
            return Err(Error::shape("column", v.shape(), (v.rows(), j + 1)));
        }
        let out = Matrix::from_vec_unchecked(v.rows(), 1, v.column(j));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Column { x, j }, rg))
    }

    /// Multiplies row `i` of `x` by `c[i]` (`c` is `n×1`).
    pub fn scale_rows(&mut self, x: Var, c: Var) -> Result<Var> {
        let (vx, vc) = (self.value(x), self.value(c));
        if vc.shape() != (vx.rows(), 1) {
            return Err(Error::shape("scale_rows", vx.shape(), vc.shape()));
        }
        let d = vx.cols();
        let mut data = Vec::with_capacity(vx.len());
        for i in 0..vx.rows() {
            let s = vc.get(i, 0);
            data.extend(vx.row(i).iter().map(|a| a * s));
        }
        let out = Matrix::from_vec_unchecked(vx.rows(), d, data);
        let rg = self.rg(x) || self.rg(c);
        self.push_checked("scale_rows", out, Op::ScaleRows { x, c }, rg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("hadamard", va.shape(), vb.shape()));
        }
        let data = va.as_slice().iter().zip(vb.as_slice()).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec_unchecked(va.rows(), va.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("hadamard", out, Op::Hadamard { a, b }, rg)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::shape("gather_rows", v.shape(), (bad, v.cols())));
        }
        let out = v.select_rows(idx);
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise clamp; the gradient is zero wherever the bound is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v.clamp(lo, hi))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Clamp { x, lo, hi }, rg))
    }

    /// Mean binary cross-entropy of probabilities `p` (`N×1`) against 0/1 labels.
    pub fn bce(&mut self, p: Var, labels: &[f64]) -> Result<Var> {
        let vp = self.value(p);
        if vp.shape() != (labels.len(), 1) {
            return Err(Error::shape("bce", vp.shape(), (labels.len(), 1)));
        }
        let loss = bce_value(vp.as_slice(), labels)?;
        let out = Matrix::scalar(loss)?;
        let rg = self.rg(p);
        Ok(self.push(
            out,
            Op::Bce {
                p,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(z)` evaluated from the logits
    /// `z` (`N×1`), finite for every logit.
    pub fn bce_logits(&mut self, z: Var, labels: &[f64]) -> Result<Var> {
        let vz = self.value(z);
        if vz.shape() != (labels.len(), 1) {
            return Err(Error::shape("bce_logits", vz.shape(), (labels.len(), 1)));
        }
        let loss = bce_logits_value(vz.as_slice(), labels)?;
        let out = Matrix::scalar(loss)?;
        let rg = self.rg(z);
        Ok(self.push(
            out,
            Op::BceLogits {
                z,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let out = Matrix::scalar(self.value(x).sum_squares())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SumSquares { x }, rg))
    }

    /// Backpropagates from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape(output) != (1, 1) {
            return Err(Error::shape("backward", self.shape(output), (1, 1)));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Matrix::from_vec_unchecked(1, 1, vec![1.0]));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (n, d, m) = (vx.rows(), vx.cols(), vw.cols());
                if self.rg(*x) {
                    let acc = slot(grads, *x, (n, d));
                    gemm_nt(g.as_slice(), vw.as_slice(), acc.as_mut_slice(), n, m, d);
                }
                if self.rg(*w) {
                    let acc = slot(grads, *w, (d, m));
                    gemm_tn(vx.as_slice(), g.as_slice(), acc.as_mut_slice(), n, d, m);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let acc = slot(grads, *b, (1, m));
                        let dst = acc.as_mut_slice();
                        for row in g.as_slice().chunks(m.max(1)) {
                            for (o, v) in dst.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.rows(), va.cols(), vb.cols());
                if self.rg(*a) {
                    let acc = slot(grads, *a, (n, k));
                    gemm_nt(g.as_slice(), vb.as_slice(), acc.as_mut_slice(), n, m, k);
                }
                if self.rg(*b) {
                    let acc = slot(grads, *b, (k, m));
                    gemm_tn(va.as_slice(), g.as_slice(), acc.as_mut_slice(), n, k, m);
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        slot(grads, v, g.shape()).add_assign(g);
                    }
                }
            }
            Op::AddBias { x, b } => {
                if self.rg(*x) {
                    slot(grads, *x, g.shape()).add_assign(g);
                }
                if self.rg(*b) {
                    let m = g.cols();
                    let dst = slot(grads, *b, (1, m)).as_mut_slice();
                    for row in g.as_slice().chunks(m.max(1)) {
                        for (o, v) in dst.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Scale { x, factor } => {
                if self.rg(*x) {
                    let acc = slot(grads, *x, g.shape());
                    for (o, v) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *o += factor * v;
                    }
                }
            }
            Op::Activate { x, kind } => {
                if self.rg(*x) {
                    let vx = self.value(*x);
                    let acc = slot(grads, *x, g.shape());
                    let it = vx.as_slice().iter().zip(out.as_slice()).zip(g.as_slice());
                    for (o, ((&xi, &yi), &gi)) in acc.as_mut_slice().iter_mut().zip(it) {
                        *o += gi * kind.derivative(xi, yi);
                    }
                }
            }
            Op::RowSoftmax { x } => {
                if self.rg(*x) {
                    let m = out.cols();
                    let acc = slot(grads, *x, g.shape());
                    let dst = acc.as_mut_slice();
                    for i in 0..out.rows() {
                        let y = out.row(i);
                        let gy = g.row(i);
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..m {
                            dst[i * m + j] += y[j] * (gy[j] - dot);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.rg(*x) {
                    let acc = slot(grads, *x, g.shape());
                    for ((o, gi), mi) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).zip(mask) {
                        *o += gi * mi;
                    }
                }
            }
            Op::Aggregate { x, agg } => {
                if self.rg(*x) {
                    let shape = self.shape(*x);
                    agg.apply_transpose(g, slot(grads, *x, shape));
                }
            }
            Op::SelfScaleAdd { h, eps, agg } => {
                let factor = 1.0 + self.value(*eps).get(0, 0);
                if self.rg(*h) {
                    let acc = slot(grads, *h, g.shape());
                    for (o, gi) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *o += factor * gi;
                    }
                }
                if self.rg(*eps) {
                    let vh = self.value(*h);
                    let s: f64 = vh.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum();
                    slot(grads, *eps, (1, 1)).as_mut_slice()[0] += s;
                }
                if self.rg(*agg) {
                    slot(grads, *agg, g.shape()).add_assign(g);
                }
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let (n, c) = self.shape(p);
                    if self.rg(p) {
                        let acc = slot(grads, p, (n, c));
                        let dst = acc.as_mut_slice();
                        for i in 0..n {
                            let src = &g.row(i)[offset..offset + c];
                            for (o, v) in dst[i * c..(i + 1) * c].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Column { x, j } => {
                if self.rg(*x) {
                    let shape = self.shape(*x);
                    let acc = slot(grads, *x, shape);
                    let cols = shape.1;
                    let dst = acc.as_mut_slice();
                    for i in 0..shape.0 {
                        dst[i * cols + j] += g.get(i, 0);
                    }
                }
            }
            Op::ScaleRows { x, c } => {
                let (vx, vc) = (self.value(*x), self.value(*c));
                let d = vx.cols();
                if self.rg(*x) {
                    let acc = slot(grads, *x, vx.shape());
                    let dst = acc.as_mut_slice();
                    for i in 0..vx.rows() {
                        let s = vc.get(i, 0);
                        for (o, gi) in dst[i * d..(i + 1) * d].iter_mut().zip(g.row(i)) {
                            *o += s * gi;
                        }
                    }
                }
                if self.rg(*c) {
                    let acc = slot(grads, *c, vc.shape());
                    let dst = acc.as_mut_slice();
                    for (i, o) in dst.iter_mut().enumerate() {
                        *o += vx.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::Hadamard { a, b } => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.rg(v) {
                        let vo = self.value(other);
                        let acc = slot(grads, v, g.shape());
                        for ((o, gi), oi) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).zip(vo.as_slice()) {
                            *o += gi * oi;
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if self.rg(*x) {
                    let shape = self.shape(*x);
                    let d = shape.1;
                    let acc = slot(grads, *x, shape);
                    let dst = acc.as_mut_slice();
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, v) in dst[i * d..(i + 1) * d].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.rg(*x) {
                    let vx = self.value(*x);
                    let acc = slot(grads, *x, g.shape());
                    for ((o, gi), &xi) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).zip(vx.as_slice()) {
                        if xi > *lo && xi < *hi {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Bce { p, labels } => {
                if self.rg(*p) {
                    let vp = self.value(*p);
                    let n = labels.len() as f64;
                    let scale = g.get(0, 0) / n;
                    let acc = slot(grads, *p, vp.shape());
                    for ((o, &pi), &yi) in acc.as_mut_slice().iter_mut().zip(vp.as_slice()).zip(labels) {
                        *o += scale * ((1.0 - yi) / (1.0 - pi) - yi / pi);
                    }
                }
            }
            Op::BceLogits { z, labels } => {
                if self.rg(*z) {
                    let vz = self.value(*z);
                    let scale = g.get(0, 0) / labels.len() as f64;
                    let acc = slot(grads, *z, vz.shape());
                    for ((o, &zi), &yi) in acc.as_mut_slice().iter_mut().zip(vz.as_slice()).zip(labels) {
                        *o += scale * (sigmoid(zi) - yi);
                    }
                }
            }
            Op::SumSquares { x } => {
                if self.rg(*x) {
                    let vx = self.value(*x);
                    let s = g.get(0, 0);
                    let acc = slot(grads, *x, vx.shape());
                    for (o, v) in acc.as_mut_slice().iter_mut().zip(vx.as_slice()) {
                        *o += 2.0 * s * v;
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let m = x.cols();
    let mut data = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        let row = x.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = data.len();
        let mut sum = 0.0;
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            data.push(e);
        }
        for e in &mut data[start..start + m] {
            *e /= sum;
        }
    }
    Matrix::from_vec_unchecked(x.rows(), m, data)
}

/// `−(1/N) Σ [y ln p + (1 − y) ln(1 − p)]`; labels must be exactly 0 or 1 and
/// probabilities strictly inside (0, 1).
/// `-(1/N) Σ [y ln σ(z) + (1-y) ln(1-σ(z))]`, computed as
/// `max(z,0) - z·y + ln(1 + e^{-|z|})`.
pub fn bce_logits_value(z: &[f64], labels: &[f64]) -> Result<f64> {
    if z.len() != labels.len() {
        return Err(Error::shape("bce_logits", (z.len(), 1), (labels.len(), 1)));
    }
    if z.is_empty() {
        return Err(Error::Data("bce over an empty batch".into()));
    }
    let mut total = 0.0;
    for (i, (&zi, &yi)) in z.iter().zip(labels).enumerate() {
        if yi != 0.0 && yi != 1.0 {
            return Err(Error::Data(format!("label {yi} at position {i} is not 0 or 1")));
        }
        total += zi.max(0.0) - zi * yi + (-zi.abs()).exp().ln_1p();
    }
    Ok(total / z.len() as f64)
}

pub fn bce_value(p: &[f64], labels: &[f64]) -> Result<f64> {
    if p.len() != labels.len() {
        return Err(Error::shape("bce", (p.len(), 1), (labels.len(), 1)));
    }
    if p.is_empty() {
        return Err(Error::Data("bce over an empty batch".into()));
    }
    let mut total = 0.0;
    for (i, (&pi, &yi)) in p.iter().zip(labels).enumerate() {
        if yi != 0.0 && yi != 1.0 {
            return Err(Error::Data(format!("label {yi} at position {i} is not 0 or 1")));
        }
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::NonFinite(format!(
                "probability {pi} at position {i} is outside (0, 1)"
            )));
        }
        total += yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln();
    }
    Ok(-total / p.len() as f64)
}
