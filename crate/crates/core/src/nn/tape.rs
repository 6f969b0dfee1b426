//! Reverse-mode gradient tape covering the operations used by the denoiser
//! and the per-category VAEs.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! node list visits every node exactly once after all of its consumers.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param { store: u64, id: ParamId },
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Sum(Var),
    LogSoftmaxRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, keyed by parameter store.
#[derive(Debug, Default)]
pub struct TapeGrads {
    by_store: HashMap<u64, HashMap<ParamId, Array2<f64>>>,
}

impl TapeGrads {
    /// Gradients aligned with `store`; parameters that did not influence the
    /// loss get exact zeros.
    pub fn for_store(&self, store: &ParamStore) -> Gradients {
        let mut g = Gradients::zeros_like(store);
        if let Some(map) = self.by_store.get(&store.uid()) {
            for (id, grad) in map {
                g.get_mut(*id).assign(grad);
            }
        }
        g
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param { .. } => true,
            Op::MatMul(a, b) | Op::AddRow(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Scale(a, _)
            | Op::ScaleRows(a, _)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Clamp(a, _, _)
            | Op::SliceCols(a, _, _)
            | Op::Sum(a)
            | Op::LogSoftmaxRows(a) => self.needs(*a),
            Op::ConcatCols(parts) => parts.iter().any(|p| self.needs(*p)),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records a trainable parameter. The current value is copied onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.get(id).clone();
        self.push(
            value,
            Op::Param {
                store: store.uid(),
                id,
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((_, ak), (bk, _)) = (self.shape(a), self.shape(b));
        if ak != bk {
            return Err(Error::config(format!(
                "matmul shape mismatch: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value = self.value(a).dot(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a + row`, broadcasting a 1xN row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(Error::config(format!("bias shape {sr:?} does not fit {sa:?}")));
        }
        let value = self.value(a) + self.value(row);
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::config(format!(
                "{what} shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a) + self.value(b);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a) - self.value(b);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a) * self.value(b);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    /// Multiplies row `r` of `a` by `weights[r]`.
    pub fn scale_rows(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.shape(a).0 {
            return Err(Error::config("row weight count does not match rows"));
        }
        let mut value = self.value(a).clone();
        for (mut row, w) in value.axis_iter_mut(Axis(0)).zip(&weights) {
            row *= *w;
        }
        Ok(self.push(value, Op::ScaleRows(a, weights)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    /// Clamps to `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::config("concat of zero parts"));
        }
        let rows = self.shape(parts[0]).0;
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return Err(Error::config("concat row count mismatch"));
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::config(e.to_string()))?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        if start > end || end > self.shape(a).1 {
            return Err(Error::config(format!(
                "column slice {start}..{end} out of bounds for {:?}",
                self.shape(a)
            )));
        }
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        Ok(self.push(value, Op::SliceCols(a, start, end)))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.axis_iter_mut(Axis(0)) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(value, Op::LogSoftmaxRows(a))
    }

    /// Convenience: `sum((a - b)^2)`.
    pub fn sum_squared_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.sum(sq))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<TapeGrads> {
        if self.nodes.is_empty() {
            return Err(Error::usage("backward called on an empty tape"));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.dim() != (1, 1) {
            return Err(Error::usage(format!("loss must be 1x1, got {:?}", lv.dim())));
        }
        if !lv[[0, 0]].is_finite() {
            return Err(Error::numerical(format!("loss is not finite: {}", lv[[0, 0]])));
        }

        let mut grads: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        let mut out = TapeGrads::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param { store, id } => {
                    let entry = out.by_store.entry(*store).or_default();
                    match entry.get_mut(id) {
                        Some(acc) => *acc += &g,
                        None => {
                            entry.insert(*id, g);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, -&g);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g * *k),
                Op::ScaleRows(a, w) => {
                    let mut g = g;
                    for (mut row, wr) in g.axis_iter_mut(Axis(0)).zip(w) {
                        row *= *wr;
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Tanh(a) => {
                    let mut g = g;
                    Zip::from(&mut g)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= 1.0 - y * y);
                    accumulate(&mut grads, *a, g);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g * &node.value),
                Op::Clamp(a, lo, hi) => {
                    let mut g = g;
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        if x < *lo || x > *hi {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, g);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.needs(*p) {
                            let gp = g.slice(s![.., start..start + w]).to_owned();
                            accumulate(&mut grads, *p, gp);
                        }
                        start += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    // d/dx_j = g_j - softmax_j * sum_k g_k
                    let mut ga = g.clone();
                    for (mut grow, yrow) in ga.axis_iter_mut(Axis(0)).zip(node.value.axis_iter(Axis(0))) {
                        let total: f64 = grow.sum();
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|gj, &y| *gj -= y.exp() * total);
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}
