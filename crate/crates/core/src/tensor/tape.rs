//! Define-by-run reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each kernel appends one
//! node holding its output value and enough cached state for its local
//! backward rule. Node ids are assigned in creation order, so the node list
//! is already topologically sorted and [`Graph::backward`] is a single
//! reverse sweep.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddConst(Var),
    MaskMul(Var, Tensor),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Tensor,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
        scale: f64,
        probs: Vec<Vec<f64>>,
    },
    Map {
        x: Var,
        deriv: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode graph whose dropout masks come from `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Graph::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Anonymous differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a named parameter from `store`. Repeated calls with the same
    /// name return the same leaf, so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?.clone();
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `a` (m×n) plus the row vector `b` (1×n) broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::AddRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Adds a constant tensor (masks, positional tables).
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let value = self.value(a).add(c)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::AddConst(a), rg))
    }

    pub fn mask_mul(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let value = self.value(a).hadamard(&mask)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MaskMul(a, mask), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).sigmoid();
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).softmax_rows()?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    /// Custom elementwise kernel with a caller-supplied derivative.
    pub fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let value = x.map(&f);
        let deriv = x.map(&df);
        let rg = self.rg(&[a]);
        self.push(value, Op::Map { x: a, deriv }, rg)
    }

    /// Inverted dropout. Identity in evaluation mode or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if !self.training || rate <= 0.0 {
            return Ok(a);
        }
        if rate >= 1.0 {
            return Err(Error::Argument(format!("dropout rate {rate} must be < 1")));
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = self.value(a).shape().to_vec();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = Tensor::new(shape, data)?;
        self.mask_mul(a, mask)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_rows(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(a).slice_rows(start, end)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(a).slice_cols(start, end)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Rows of `table` selected by `indices` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if !t.is_matrix() {
            return Err(Error::dim("gather_rows", t.shape(), &[0, 0]));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= t.rows() {
                return Err(Error::Contract(format!(
                    "row index {i} out of range for table with {} rows",
                    t.rows()
                )));
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(indices.len(), c, data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(value, Op::Gather(table, indices.to_vec()), rg))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mean_rows()?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MeanRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Row-wise layer normalisation with learned gain and bias (both 1×d).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        if !xv.is_matrix() || gv.len() != xv.cols() || bv.len() != xv.cols() {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let (r, c) = (xv.rows(), xv.cols());
        let mut normed = Tensor::zeros(&[r, c]);
        let mut out = Tensor::zeros(&[r, c]);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            let nrow = normed.row_mut(i);
            for (n, v) in nrow.iter_mut().zip(row) {
                *n = (v - mean) * inv;
            }
            let orow = out.row_mut(i);
            for j in 0..c {
                orow[j] = normed.at(i, j) * gv.data()[j] + bv.data()[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    /// `scale · Σ −log softmax(logits[row])[target]` over `(row, target)` pairs.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)], scale: f64) -> Result<Var> {
        let lv = self.value(logits);
        if !lv.is_matrix() {
            return Err(Error::dim("cross_entropy", lv.shape(), &[0, 0]));
        }
        let mut total = 0.0;
        let mut probs = Vec::with_capacity(targets.len());
        for &(r, t) in targets {
            if r >= lv.rows() || t >= lv.cols() {
                return Err(Error::Contract(format!(
                    "cross-entropy target ({r}, {t}) outside logits {:?}",
                    lv.shape()
                )));
            }
            let mut p = lv.row(r).to_vec();
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + p.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            total += lse - p[t];
            for z in p.iter_mut() {
                *z = (*z - lse).exp();
            }
            probs.push(p);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total * scale),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                scale,
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut leaves = BTreeMap::new();

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |v: Var, t: Tensor| -> Result<()> {
                if !self.nodes[v.0].requires_grad {
                    return Ok(());
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf => {
                    leaves.insert(id, g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.requires_grad(*a) {
                        acc(*a, g.matmul_nt(bv)?)?;
                    }
                    if self.requires_grad(*b) {
                        acc(*b, av.matmul_tn(&g)?)?;
                    }
                }
                Op::Transpose(a) => acc(*a, g.transpose()?)?,
                Op::Add(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g)?;
                }
                Op::Sub(a, b) => {
                    acc(*b, g.scale(-1.0))?;
                    acc(*a, g)?;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.requires_grad(*a) {
                        acc(*a, g.hadamard(bv)?)?;
                    }
                    if self.requires_grad(*b) {
                        acc(*b, g.hadamard(av)?)?;
                    }
                }
                Op::AddRow(a, b) => {
                    if self.requires_grad(*b) {
                        let summed = column_sums(&g);
                        let shape = self.value(*b).shape().to_vec();
                        acc(*b, summed.reshape(shape)?)?;
                    }
                    acc(*a, g)?;
                }
                Op::Scale(a, s) => acc(*a, g.scale(*s))?,
                Op::AddScalar(a) | Op::AddConst(a) => acc(*a, g)?,
                Op::MaskMul(a, m) => acc(*a, g.hadamard(m)?)?,
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(*a, g.zip_map(x, "relu", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?)?;
                }
                Op::Sigmoid(a) => {
                    acc(*a, g.zip_map(&node.value, "sigmoid", |gv, y| gv * y * (1.0 - y))?)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut dx = Tensor::zeros(y.shape());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let out = &mut dx.data_mut()[r * c..(r + 1) * c];
                        for j in 0..c {
                            out[j] = yr[j] * (gr[j] - inner);
                        }
                    }
                    acc(*a, dx)?;
                }
                Op::Map { x, deriv } => acc(*x, g.hadamard(deriv)?)?,
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        if self.requires_grad(*p) {
                            acc(*p, g.slice_rows(start, start + rows)?)?;
                        }
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        if self.requires_grad(*p) {
                            acc(*p, g.slice_cols(start, start + cols)?)?;
                        }
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut dx = Tensor::zeros(src.shape());
                    let c = src.cols();
                    dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(*a, dx)?;
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut dx = Tensor::zeros(src.shape());
                    let w = g.cols();
                    for r in 0..src.rows() {
                        dx.row_mut(r)[*start..start + w].copy_from_slice(g.row(r));
                    }
                    acc(*a, dx)?;
                }
                Op::Gather(table, indices) => {
                    let mut dx = Tensor::zeros(self.value(*table).shape());
                    for (k, &i) in indices.iter().enumerate() {
                        for (d, s) in dx.row_mut(i).iter_mut().zip(g.row(k)) {
                            *d += s;
                        }
                    }
                    acc(*table, dx)?;
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let inv = 1.0 / src.rows() as f64;
                    let mut dx = Tensor::zeros(src.shape());
                    for r in 0..src.rows() {
                        for (d, s) in dx.row_mut(r).iter_mut().zip(g.data()) {
                            *d = s * inv;
                        }
                    }
                    acc(*a, dx)?;
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    acc(*a, Tensor::full(&shape, g.item()))?;
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (r, c) = (normed.rows(), normed.cols());
                    if self.requires_grad(*gain) {
                        let mut dg = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                dg[j] += g.at(i, j) * normed.at(i, j);
                            }
                        }
                        let shape = gv.shape().to_vec();
                        acc(*gain, Tensor::new(shape, dg)?)?;
                    }
                    if self.requires_grad(*bias) {
                        let shape = self.value(*bias).shape().to_vec();
                        acc(*bias, column_sums(&g).reshape(shape)?)?;
                    }
                    if self.requires_grad(*x) {
                        let mut dx = Tensor::zeros(&[r, c]);
                        let n = c as f64;
                        for i in 0..r {
                            let dxhat: Vec<f64> =
                                (0..c).map(|j| g.at(i, j) * gv.data()[j]).collect();
                            let sum: f64 = dxhat.iter().sum();
                            let dot: f64 = dxhat.iter().zip(normed.row(i)).map(|(a, b)| a * b).sum();
                            let out = dx.row_mut(i);
                            for j in 0..c {
                                out[j] = inv_std[i] / n
                                    * (n * dxhat[j] - sum - normed.at(i, j) * dot);
                            }
                        }
                        acc(*x, dx)?;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    scale,
                    probs,
                } => {
                    let lv = self.value(*logits);
                    let mut dx = Tensor::zeros(lv.shape());
                    let up = g.item() * scale;
                    for (&(r, t), p) in targets.iter().zip(probs) {
                        let row = dx.row_mut(r);
                        for (d, pv) in row.iter_mut().zip(p) {
                            *d += up * pv;
                        }
                        row[t] -= up;
                    }
                    acc(*logits, dx)?;
                }
            }
        }

        let mut by_name = BTreeMap::new();
        for (name, v) in &self.params {
            let g = leaves
                .get(&v.0)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            by_name.insert(name.clone(), g);
        }
        Ok(Gradients {
            by_name,
            by_var: leaves,
        })
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Tensor::row_vector(out)
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
    by_var: BTreeMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient of a named parameter bound on the graph.
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    /// Gradient of any differentiable leaf; `None` if it was unreachable.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.by_var.get(&v.0)
    }

    pub fn named(&self) -> &BTreeMap<String, Tensor> {
        &self.by_name
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }

    /// Adds a zero gradient for every store entry the graph never bound.
    pub fn complete_for(mut self, store: &ParamStore) -> Self {
        for (name, t) in store.iter() {
            self.by_name
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(t.shape()));
        }
        self
    }

    pub fn global_norm(&self) -> f64 {
        self.by_name.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so the global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for t in self.by_name.values_mut() {
                for v in t.data_mut() {
                    *v *= s;
                }
            }
        }
        norm
    }

    #[cfg(test)]
    pub(crate) fn from_named(by_name: BTreeMap<String, Tensor>) -> Self {
        Gradients {
            by_name,
            by_var: BTreeMap::new(),
        }
    }

    /// Accumulates another set of named gradients into this one.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (name, g) in &other.by_name {
            match self.by_name.get_mut(name) {
                Some(t) => t.add_assign(g)?,
                None => {
                    self.by_name.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.of(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::row_vector(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let _unused = g.scale(w, 2.0);
        let c = g.constant(Tensor::scalar(5.0));
        let loss = g.add_scalar(c, 1.0);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_param_accumulates() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(2.0));
        let mut g = Graph::new();
        let a = g.param(&store, "w").unwrap();
        let b = g.param(&store, "w").unwrap();
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get("w").unwrap().item(), 4.0);
    }

    #[test]
    fn dropout_is_identity_in_eval_and_seeded_in_training() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[4, 4], 1.0));
        assert_eq!(g.dropout(x, 0.5).unwrap(), x);

        let run = |seed| {
            let mut g = Graph::training(seed);
            let x = g.leaf(Tensor::full(&[8, 8], 1.0));
            let y = g.dropout(x, 0.5).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run(1), run(1));
        let out = run(1);
        assert!(out.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn clip_global_norm_rescales() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), Tensor::row_vector(vec![3.0, 4.0]));
        let mut grads = Gradients::from_named(m);
        let before = grads.clip_global_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }
}
