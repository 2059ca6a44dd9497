//! Reverse-mode differentiation over a linear operation tape.
//!
//! Every operation appends a node holding its forward value and enough
//! information to run its backward rule. Nodes are only ever appended, so the
//! node list is already in topological order and `backward` is a single
//! reverse sweep. Parameters enter the tape through [`Tape::param`], which
//! reuses one leaf per parameter so that every use accumulates into the same
//! gradient.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{Contribution, ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Probabilities below this are clamped before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation families, used to address a backward rule for fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Transpose,
    Add,
    AddRow,
    Mul,
    MulRow,
    Scale,
    Concat,
    Relu,
    Softmax,
    MaskedSoftmax,
    Gather,
    Unfold,
    Sum,
    Nll,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    ParamRows(ParamId, Vec<usize>),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Concat(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    MaskedSoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    Unfold(Var, usize),
    Sum(Var),
    Nll(Var, Vec<usize>, Vec<f64>),
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf | Op::Param(_) | Op::ParamRows(..) => return None,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Mul(..) => OpKind::Mul,
            Op::MulRow(..) => OpKind::MulRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Concat(..) => OpKind::Concat,
            Op::Relu(_) => OpKind::Relu,
            Op::SoftmaxRows(_) => OpKind::Softmax,
            Op::MaskedSoftmaxRows(_) => OpKind::MaskedSoftmax,
            Op::GatherRows(..) => OpKind::Gather,
            Op::Unfold(..) => OpKind::Unfold,
            Op::Sum(_) => OpKind::Sum,
            Op::Nll(..) => OpKind::Nll,
        })
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
    fault: Option<OpKind>,
}

/// Gradients of one scalar with respect to every node on a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn row_softmax(x: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(x.shape());
    for i in 0..rows {
        let allowed = |j: usize| mask.is_none_or(|m| m[i * cols + j]);
        let row = x.row(i);
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if allowed(j) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            // fully masked row: leave zeros
            continue;
        }
        let mut total = 0.0;
        let dst = &mut out.data_mut()[i * cols..(i + 1) * cols];
        for (j, &v) in row.iter().enumerate() {
            if allowed(j) {
                let e = (v - max).exp();
                dst[j] = e;
                total += e;
            }
        }
        for v in dst.iter_mut() {
            *v /= total;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes the backward rule of `kind` deliberately wrong. Exists so that the
    /// gradient checker can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Non-parameter input. Its gradient is still available from
    /// [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf, shared by every call with the same id on this tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id));
        self.param_leaves.insert(id, v);
        v
    }

    /// A fresh leaf for `id` that is not shared with other uses. Its gradient
    /// is still folded into the parameter's total by [`Tape::param_grads`].
    pub fn param_untied(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// Rows `indices` of a matrix parameter, with a sparse backward rule.
    pub fn param_rows(&mut self, store: &ParamStore, id: ParamId, indices: &[usize]) -> Result<Var> {
        let table = store.get(id);
        let cols = table.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= table.rows() {
                return Err(Error::Contract(format!(
                    "row {i} out of range for {} with {} rows",
                    store.name(id),
                    table.rows()
                )));
            }
            data.extend_from_slice(table.row(i));
        }
        let value = Tensor::matrix(indices.len(), cols, data)?;
        Ok(self.push(value, Op::ParamRows(id, indices.to_vec())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    /// `x · wᵀ + b` for a weight stored as `[out × in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let wt = self.transpose(w);
        let y = self.matmul(x, wt)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds the vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.cols() {
            return Err(Error::dim("add_row", xv.shape(), bv.shape()));
        }
        let cols = xv.cols();
        let mut value = xv.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % cols];
        }
        Ok(self.push(value, Op::AddRow(x, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Multiplies column `j` of `x` by `v[j]`.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xv, vv) = (self.value(x), self.value(v));
        if vv.len() != xv.cols() {
            return Err(Error::dim("mul_row", xv.shape(), vv.shape()));
        }
        let cols = xv.cols();
        let mut value = xv.clone();
        for (i, e) in value.data_mut().iter_mut().enumerate() {
            *e *= vv.data()[i % cols];
        }
        Ok(self.push(value, Op::MulRow(x, v)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor))
    }

    /// Concatenation along the last axis. Vectors stay vectors; matrices must
    /// agree on their leading dimension.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let vectors = av.shape().len() == 1 && bv.shape().len() == 1;
        if !vectors && (av.shape().len() != 2 || bv.shape().len() != 2 || av.rows() != bv.rows()) {
            return Err(Error::dim("concat", av.shape(), bv.shape()));
        }
        let (rows, qa, qb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(rows * (qa + qb));
        for i in 0..rows {
            data.extend_from_slice(&av.data()[i * qa..(i + 1) * qa]);
            data.extend_from_slice(&bv.data()[i * qb..(i + 1) * qb]);
        }
        let shape = if vectors { vec![qa + qb] } else { vec![rows, qa + qb] };
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(a, b)))
    }

    pub fn concat_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &p| self.concat(acc, p))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = row_softmax(self.value(x), None);
        self.push(value, Op::SoftmaxRows(x))
    }

    /// Row-wise softmax restricted to positions where `mask` is true. A row
    /// with no allowed position produces an all-zero row.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::dim("masked_softmax", self.shape(x), &[mask.len()]));
        }
        let value = row_softmax(self.value(x), Some(mask));
        Ok(self.push(value, Op::MaskedSoftmaxRows(x)))
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= xv.rows() {
                return Err(Error::Contract(format!("gather index {i} out of range")));
            }
            data.extend_from_slice(xv.row(i));
        }
        let value = Tensor::matrix(indices.len(), cols, data)?;
        Ok(self.push(value, Op::GatherRows(x, indices.to_vec())))
    }

    /// Sliding windows of `width` rows (odd), zero padded so that the output
    /// has as many rows as the input. Row `i` of the result is the
    /// concatenation of input rows `i - width/2 ..= i + width/2`.
    pub fn unfold(&mut self, x: Var, width: usize) -> Result<Var> {
        if width.is_multiple_of(2) {
            return Err(Error::Contract(format!("window width {width} must be odd")));
        }
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let half = width / 2;
        let mut value = Tensor::zeros(&[n, width * d]);
        for i in 0..n {
            for w in 0..width {
                let src = i + w;
                if src < half || src - half >= n {
                    continue;
                }
                let src = src - half;
                let dst = &mut value.data_mut()[i * width * d + w * d..i * width * d + (w + 1) * d];
                dst.copy_from_slice(&xv.data()[src * d..(src + 1) * d]);
            }
        }
        Ok(self.push(value, Op::Unfold(x, width)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// `Σ_i weight_i · −ln(max(p[i, gold_i], LOG_CLAMP))` over the rows of a
    /// probability matrix.
    pub fn nll(&mut self, probs: Var, gold: &[usize], weights: &[f64]) -> Result<Var> {
        let pv = self.value(probs);
        if gold.len() != pv.rows() || weights.len() != pv.rows() {
            return Err(Error::dim("nll", pv.shape(), &[gold.len(), weights.len()]));
        }
        let mut total = 0.0;
        for (i, (&g, &w)) in gold.iter().zip(weights).enumerate() {
            if g >= pv.cols() {
                return Err(Error::Contract(format!("class {g} out of range")));
            }
            if w != 0.0 {
                total += w * -pv.get(i, g).max(LOG_CLAMP).ln();
            }
        }
        let value = Tensor::scalar(total);
        Ok(self.push(value, Op::Nll(probs, gold.to_vec(), weights.to_vec())))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_seeded(loss, 1.0)
    }

    pub fn backward_seeded(&self, loss: Var, seed: f64) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), seed));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let corrupt = node.op.kind().is_some() && node.op.kind() == self.fault;
            for (target, mut g) in self.local_grads(node, &upstream)? {
                if corrupt {
                    g.scale_assign(1.5);
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(upstream);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, dy: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        Ok(match &node.op {
            Op::Leaf | Op::Param(_) | Op::ParamRows(..) => vec![],
            Op::MatMul(a, b) => {
                let da = dy.matmul(&val(*b).transpose())?;
                let db = val(*a).transpose().matmul(dy)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(a) => {
                let g = dy.transpose().reshape(val(*a).shape().to_vec())?;
                vec![(*a, g)]
            }
            Op::Add(a, b) => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::AddRow(x, b) => {
                let cols = dy.cols();
                let mut db = vec![0.0; cols];
                for (i, v) in dy.data().iter().enumerate() {
                    db[i % cols] += v;
                }
                let db = Tensor::new(val(*b).shape().to_vec(), db)?;
                vec![(*x, dy.clone()), (*b, db)]
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let da = Tensor::new(
                    dy.shape().to_vec(),
                    dy.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect(),
                )?;
                let db = Tensor::new(
                    dy.shape().to_vec(),
                    dy.data().iter().zip(av.data()).map(|(g, x)| g * x).collect(),
                )?;
                vec![(*a, da), (*b, db)]
            }
            Op::MulRow(x, v) => {
                let (xv, vv) = (val(*x), val(*v));
                let cols = xv.cols();
                let mut dx = dy.clone();
                let mut dv = vec![0.0; cols];
                for (i, g) in dx.data_mut().iter_mut().enumerate() {
                    dv[i % cols] += *g * xv.data()[i];
                    *g *= vv.data()[i % cols];
                }
                vec![(*x, dx), (*v, Tensor::new(vv.shape().to_vec(), dv)?)]
            }
            Op::Scale(x, f) => vec![(*x, dy.map(|g| g * f))],
            Op::Concat(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (rows, qa, qb) = (av.rows(), av.cols(), bv.cols());
                let mut da = Vec::with_capacity(av.len());
                let mut db = Vec::with_capacity(bv.len());
                for i in 0..rows {
                    let row = &dy.data()[i * (qa + qb)..(i + 1) * (qa + qb)];
                    da.extend_from_slice(&row[..qa]);
                    db.extend_from_slice(&row[qa..]);
                }
                vec![
                    (*a, Tensor::new(av.shape().to_vec(), da)?),
                    (*b, Tensor::new(bv.shape().to_vec(), db)?),
                ]
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let data = dy
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*x, Tensor::new(dy.shape().to_vec(), data)?)]
            }
            Op::SoftmaxRows(x) | Op::MaskedSoftmaxRows(x) => {
                let y = &node.value;
                let cols = y.cols();
                let mut dx = Tensor::zeros(y.shape());
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = &dy.data()[i * cols..(i + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let dst = &mut dx.data_mut()[i * cols..(i + 1) * cols];
                    for j in 0..cols {
                        dst[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*x, dx)]
            }
            Op::GatherRows(x, indices) => {
                let xv = val(*x);
                let cols = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..cols {
                        dx.data_mut()[i * cols + c] += dy.data()[r * cols + c];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Unfold(x, width) => {
                let xv = val(*x);
                let (n, d) = (xv.rows(), xv.cols());
                let half = width / 2;
                let mut dx = Tensor::zeros(xv.shape());
                for i in 0..n {
                    for w in 0..*width {
                        let src = i + w;
                        if src < half || src - half >= n {
                            continue;
                        }
                        let src = src - half;
                        for c in 0..d {
                            dx.data_mut()[src * d + c] += dy.data()[i * width * d + w * d + c];
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), dy.item()))],
            Op::Nll(p, gold, weights) => {
                let pv = val(*p);
                let mut dp = Tensor::zeros(pv.shape());
                for (i, (&g, &w)) in gold.iter().zip(weights).enumerate() {
                    let prob = pv.get(i, g);
                    if w != 0.0 && prob > LOG_CLAMP {
                        dp.set(i, g, -w / prob * dy.item());
                    }
                }
                vec![(*p, dp)]
            }
        })
    }

    /// Parameter gradient contributions found in `grads`, in tape order.
    pub fn param_contributions(&self, grads: &Gradients) -> Vec<(ParamId, Contribution)> {
        let mut out = Vec::new();
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            let Some(g) = g else { continue };
            match &node.op {
                Op::Param(id) => out.push((*id, Contribution::Dense(g.clone()))),
                Op::ParamRows(id, indices) => out.push((
                    *id,
                    Contribution::Rows {
                        indices: indices.clone(),
                        values: g.clone(),
                    },
                )),
                _ => {}
            }
        }
        out
    }

    /// Dense per-parameter gradients. Parameters that do not influence the
    /// loss get zeros.
    pub fn param_grads(&self, store: &ParamStore, grads: &Gradients) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (id, c) in self.param_contributions(grads) {
            out.accumulate(id, &c);
        }
        out
    }
}

/// Softmax over the unmasked entries of a vector; masked entries get 0.
pub fn masked_softmax(scores: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if scores.len() != mask.len() {
        return Err(Error::dim("masked_softmax", scores.shape(), &[mask.len()]));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::DegenerateMask);
    }
    let row = Tensor::new(vec![1, scores.len()], scores.data().to_vec())?;
    row_softmax(&row, Some(mask)).reshape(scores.shape().to_vec())
}

/// `−ln p[gold]` for a probability vector, with the argument clamped at
/// [`LOG_CLAMP`].
pub fn cross_entropy(predicted: &[f64], gold: usize) -> Result<f64> {
    let total: f64 = predicted.iter().sum();
    if (total - 1.0).abs() > 1e-9 || predicted.iter().any(|&p| p < 0.0) {
        return Err(Error::Contract(format!(
            "predicted distribution sums to {total}"
        )));
    }
    let p = predicted
        .get(gold)
        .ok_or_else(|| Error::Contract(format!("gold class {gold} out of range")))?;
    Ok(-p.max(LOG_CLAMP).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn matmul_zeros_and_backward() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros(&[2, 3]));
        let b = tape.input(Tensor::full(&[3, 4], 2.0));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &Tensor::zeros(&[2, 4]));
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        // d sum(AB)/dA = 1·Bᵀ → every entry is a row sum of B
        assert_eq!(g.wrt(a).unwrap(), &Tensor::full(&[2, 3], 8.0));
        assert_eq!(g.wrt(b).unwrap(), &Tensor::zeros(&[3, 4]));
    }

    #[test]
    fn matmul_shape_error() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros(&[2, 3]));
        let b = tape.input(Tensor::zeros(&[4, 2]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn concat_vectors_and_empty_left() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.input(Tensor::vector(vec![3.0]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);

        let e = tape.input(Tensor::vector(vec![]));
        let f = tape.input(Tensor::vector(vec![5.0]));
        let g = tape.concat(e, f).unwrap();
        assert_eq!(tape.value(g).data(), &[5.0]);

        let s = tape.sum(c);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn concat_leading_mismatch() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros(&[2, 1]));
        let b = tape.input(Tensor::zeros(&[3, 1]));
        assert!(tape.concat(a, b).is_err());
    }

    #[test]
    fn relu_forward_backward() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![-3.0, -0.5]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);

        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![-1.0, 2.0]));
        let y = tape.relu(x);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn masked_softmax_examples() {
        let p = masked_softmax(&Tensor::vector(vec![0.0; 3]), &[true; 3]).unwrap();
        assert_close(p.data(), &[1.0 / 3.0; 3], 1e-15);

        let p = masked_softmax(&Tensor::vector(vec![4.0, -2.0, 9.0]), &[false, true, false]).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 0.0]);

        let p = masked_softmax(
            &Tensor::vector(vec![2f64.ln(), 1f64.ln()]),
            &[true, true],
        )
        .unwrap();
        assert_close(p.data(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15);

        assert!(matches!(
            masked_softmax(&Tensor::vector(vec![1.0, 2.0]), &[false, false]),
            Err(Error::DegenerateMask)
        ));
    }

    #[test]
    fn masked_softmax_is_stable_for_large_scores() {
        let p = masked_softmax(&Tensor::vector(vec![1000.0, 999.0]), &[true, true]).unwrap();
        assert!(p.is_finite());
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        assert!((cross_entropy(&[third; 3], 2).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[0.5, 0.5, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&[0.5, 0.6], 0).is_err());
        // clamped rather than infinite
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() + LOG_CLAMP.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_rows(&[vec![1.0, 2.0]]));
        let unused = store.add("unused", Tensor::vector(vec![3.0]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.input(Tensor::from_rows(&[vec![3.0], vec![4.0]]));
        let y = tape.matmul(wv, x).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        let pg = tape.param_grads(&store, &grads);
        // d(W·x)/dW = xᵀ
        assert_eq!(pg.get(w).data(), &[3.0, 4.0]);
        assert_eq!(pg.get(unused).data(), &[0.0]);
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![2.0]));
        let mut tape = Tape::new();
        let a = tape.param(&store, w);
        let b = tape.param(&store, w);
        assert_eq!(a, b);
        let y = tape.mul(a, b).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(tape.param_grads(&store, &g).get(w).data(), &[4.0]);
    }

    #[test]
    fn unfold_pads_with_zeros() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]));
        let u = tape.unfold(x, 3).unwrap();
        assert_eq!(
            tape.value(u).data(),
            &[0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 0.0]
        );
        let s = tape.sum(u);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 3.0, 2.0]);
    }

    #[test]
    fn nll_clamps_and_weights() {
        let mut tape = Tape::new();
        let p = tape.input(Tensor::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]));
        let l = tape.nll(p, &[0, 1], &[1.0, 0.0]).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-15);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(p).unwrap().data(), &[-2.0, 0.0, 0.0, 0.0]);
    }
}
