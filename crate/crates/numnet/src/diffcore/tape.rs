//! Recorded computation tape with reverse-mode differentiation.
//!
//! Forward ops execute eagerly, push one node each, and return a [`Var`]
//! handle. `backward` consumes the tape, walks the nodes in reverse and
//! accumulates gradients for every named parameter leaf. Values are plain
//! dense matrices; nodes saved on the tape keep the activations the
//! backward rules need.
//!
//! Conventions:
//! * masked softmax assigns probability 0 to masked positions and
//!   renormalizes over the rest; a fully masked row is all zeros;
//! * masked log-softmax writes 0 at masked positions, which must never be
//!   gathered downstream;
//! * `mean_cols` over an empty subset is exactly the zero vector;
//! * `relu` uses subgradient 0 at the kink.

use super::real::Real;
use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use super::DiffError;
use std::collections::BTreeMap;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Gradients keyed by parameter name.
pub type Gradients<S> = BTreeMap<String, Tensor<S>>;

enum Op<S: Real> {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulRow(Var, Var),
    Scale(Var, S),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    RowSoftmax { x: Var, mask: Option<Vec<bool>> },
    RowLogSoftmax { x: Var, mask: Option<Vec<bool>> },
    LogSumExp(Var),
    Sum(Var),
    MeanCols { x: Var, subset: Vec<usize> },
    GatherCols { x: Var, idx: Vec<usize> },
    ScatterCols { x: Var, idx: Vec<usize> },
    GatherEntries { x: Var, idx: Vec<(usize, usize)> },
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    Reshape(Var),
}

struct Node<S: Real> {
    op: Op<S>,
    value: Tensor<S>,
    needs_grad: bool,
}

pub struct Tape<S: Real> {
    nodes: Vec<Node<S>>,
    named: Vec<(String, Var)>,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            named: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite forward value");
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Add an unnamed leaf. Gradient tracking follows
    /// `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> Var {
        let needs = tensor.requires_grad;
        self.push(Op::Leaf, tensor, needs)
    }

    /// Add a constant leaf (never differentiated).
    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.push(Op::Leaf, tensor, false)
    }

    /// Add a named parameter leaf; `backward` reports a gradient for every
    /// name registered this way.
    pub fn param(&mut self, name: &str, tensor: Tensor<S>) -> Var {
        let v = self.push(Op::Leaf, tensor, true);
        self.named.push((name.to_string(), v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            return Err(DiffError::Dimension(format!(
                "matmul: {ar}x{ac} * {br}x{bc}"
            )));
        }
        let out = matmul(self.value(a), self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul(a, b), out, needs))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(Op::Transpose(a), out, needs)
    }

    fn elementwise_pair(&self, op: &str, a: Var, b: Var) -> Result<(), DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(DiffError::Dimension(format!(
                "{op}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.elementwise_pair("add", a, b)?;
        let out = Tensor::from_fn(self.value(a).rows(), self.value(a).cols(), |i, j| {
            self.value(a).get(i, j) + self.value(b).get(i, j)
        });
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), out, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.elementwise_pair("sub", a, b)?;
        let out = Tensor::from_fn(self.value(a).rows(), self.value(a).cols(), |i, j| {
            self.value(a).get(i, j) - self.value(b).get(i, j)
        });
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), out, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.elementwise_pair("mul", a, b)?;
        let out = Tensor::from_fn(self.value(a).rows(), self.value(a).cols(), |i, j| {
            self.value(a).get(i, j) * self.value(b).get(i, j)
        });
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), out, needs))
    }

    /// Add a column vector (`m x 1`) to every column of `a` (`m x n`).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, DiffError> {
        let (m, n) = self.value(a).shape();
        if self.value(bias).shape() != (m, 1) {
            return Err(DiffError::Dimension(format!(
                "add_bias: {m}x{n} with bias {:?}",
                self.value(bias).shape()
            )));
        }
        let out = Tensor::from_fn(m, n, |i, j| {
            self.value(a).get(i, j) + self.value(bias).get(i, 0)
        });
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(Op::AddBias(a, bias), out, needs))
    }

    /// Add a row vector (`1 x n`) to every row of `a` (`m x n`).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let (m, n) = self.value(a).shape();
        if self.value(row).shape() != (1, n) {
            return Err(DiffError::Dimension(format!(
                "add_row: {m}x{n} with row {:?}",
                self.value(row).shape()
            )));
        }
        let out = Tensor::from_fn(m, n, |i, j| {
            self.value(a).get(i, j) + self.value(row).get(0, j)
        });
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(Op::AddRow(a, row), out, needs))
    }

    /// Multiply every column of `a` (`m x n`) elementwise by a column
    /// vector (`m x 1`).
    pub fn mul_col(&mut self, a: Var, v: Var) -> Result<Var, DiffError> {
        let (m, n) = self.value(a).shape();
        if self.value(v).shape() != (m, 1) {
            return Err(DiffError::Dimension(format!(
                "mul_col: {m}x{n} with column {:?}",
                self.value(v).shape()
            )));
        }
        let out = Tensor::from_fn(m, n, |i, j| self.value(a).get(i, j) * self.value(v).get(i, 0));
        let needs = self.needs(a) || self.needs(v);
        Ok(self.push(Op::MulCol(a, v), out, needs))
    }

    /// Multiply every row of `a` (`m x n`) elementwise by a row vector
    /// (`1 x n`).
    pub fn mul_row(&mut self, a: Var, v: Var) -> Result<Var, DiffError> {
        let (m, n) = self.value(a).shape();
        if self.value(v).shape() != (1, n) {
            return Err(DiffError::Dimension(format!(
                "mul_row: {m}x{n} with row {:?}",
                self.value(v).shape()
            )));
        }
        let out = Tensor::from_fn(m, n, |i, j| self.value(a).get(i, j) * self.value(v).get(0, j));
        let needs = self.needs(a) || self.needs(v);
        Ok(self.push(Op::MulRow(a, v), out, needs))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let out = self.value(a).map(|v| v * k);
        let needs = self.needs(a);
        self.push(Op::Scale(a, k), out, needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = S::one();
        let out = self.value(a).map(|v| one / (one + (-v).exp()));
        let needs = self.needs(a);
        self.push(Op::Sigmoid(a), out, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > S::zero() { v } else { S::zero() });
        let needs = self.needs(a);
        self.push(Op::Relu(a), out, needs)
    }

    /// Elementwise natural log. All entries must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        if self.value(a).data().iter().any(|v| *v <= S::zero()) {
            return Err(DiffError::Contract(
                "log: non-positive entry".to_string(),
            ));
        }
        let out = self.value(a).map(|v| v.ln());
        let needs = self.needs(a);
        Ok(self.push(Op::Log(a), out, needs))
    }

    /// Softmax over each row. Masked columns (mask[j] = false) receive
    /// probability 0; the rest renormalize. A fully masked row is all
    /// zeros.
    pub fn row_softmax(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var, DiffError> {
        let value = softmax_forward(self.value(a), mask.as_deref(), false)?;
        let needs = self.needs(a);
        Ok(self.push(Op::RowSoftmax { x: a, mask }, value, needs))
    }

    /// Log-softmax over each row with the same masking convention; masked
    /// positions hold 0 and must not be read.
    pub fn row_log_softmax(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var, DiffError> {
        let value = softmax_forward(self.value(a), mask.as_deref(), true)?;
        let needs = self.needs(a);
        Ok(self.push(Op::RowLogSoftmax { x: a, mask }, value, needs))
    }

    /// log(sum(exp(x))) over all entries, returned as a 1x1 scalar.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var, DiffError> {
        if self.value(a).is_empty() {
            return Err(DiffError::Contract("log_sum_exp: empty input".into()));
        }
        let max = self
            .value(a)
            .data()
            .iter()
            .cloned()
            .fold(S::neg_infinity(), S::max);
        let sum: S = self
            .value(a)
            .data()
            .iter()
            .map(|&v| (v - max).exp())
            .fold(S::zero(), |acc, v| acc + v);
        let out = Tensor::scalar(max + sum.ln());
        let needs = self.needs(a);
        Ok(self.push(Op::LogSumExp(a), out, needs))
    }

    /// Sum of all entries as a 1x1 scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self
            .value(a)
            .data()
            .iter()
            .fold(S::zero(), |acc, &v| acc + v);
        let needs = self.needs(a);
        self.push(Op::Sum(a), Tensor::scalar(s), needs)
    }

    /// Mean of the selected columns, as an `m x 1` vector. An empty subset
    /// yields exactly zero.
    pub fn mean_cols(&mut self, a: Var, subset: Vec<usize>) -> Result<Var, DiffError> {
        let (m, n) = self.value(a).shape();
        if subset.iter().any(|&j| j >= n) {
            return Err(DiffError::Dimension(format!(
                "mean_cols: column index out of range for {m}x{n}"
            )));
        }
        let mut out = Tensor::zeros(m, 1);
        if !subset.is_empty() {
            let inv = S::one() / S::of(subset.len() as f64);
            for i in 0..m {
                let mut acc = S::zero();
                for &j in &subset {
                    acc += self.value(a).get(i, j);
                }
                out.set(i, 0, acc * inv);
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Op::MeanCols { x: a, subset }, out, needs))
    }

    /// Select columns by index (duplicates allowed), preserving order.
    pub fn gather_cols(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, DiffError> {
        let (m, n) = self.value(a).shape();
        if idx.iter().any(|&j| j >= n) {
            return Err(DiffError::Dimension(format!(
                "gather_cols: column index out of range for {m}x{n}"
            )));
        }
        let out = Tensor::from_fn(m, idx.len(), |i, t| self.value(a).get(i, idx[t]));
        let needs = self.needs(a);
        Ok(self.push(Op::GatherCols { x: a, idx }, out, needs))
    }

    /// Column lookup into an embedding table (`dim x vocab`).
    pub fn embedding_lookup(&mut self, table: Var, ids: Vec<usize>) -> Result<Var, DiffError> {
        self.gather_cols(table, ids)
    }

    /// Place the columns of `a` (`m x k`) into an `m x cols` zero matrix at
    /// the given distinct column indices.
    pub fn scatter_cols(&mut self, a: Var, idx: Vec<usize>, cols: usize) -> Result<Var, DiffError> {
        let (m, k) = self.value(a).shape();
        if idx.len() != k {
            return Err(DiffError::Dimension(format!(
                "scatter_cols: {k} source columns but {} indices",
                idx.len()
            )));
        }
        if idx.iter().any(|&j| j >= cols) {
            return Err(DiffError::Dimension(format!(
                "scatter_cols: target index out of range for width {cols}"
            )));
        }
        let mut seen = vec![false; cols];
        for &j in &idx {
            if seen[j] {
                return Err(DiffError::Contract(format!(
                    "scatter_cols: duplicate target column {j}"
                )));
            }
            seen[j] = true;
        }
        let mut out = Tensor::zeros(m, cols);
        for (t, &j) in idx.iter().enumerate() {
            for i in 0..m {
                out.set(i, j, self.value(a).get(i, t));
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Op::ScatterCols { x: a, idx }, out, needs))
    }

    /// Pick individual entries `(row, col)` into a `1 x k` row vector.
    pub fn gather_entries(&mut self, a: Var, idx: Vec<(usize, usize)>) -> Result<Var, DiffError> {
        let (m, n) = self.value(a).shape();
        if idx.iter().any(|&(i, j)| i >= m || j >= n) {
            return Err(DiffError::Dimension(format!(
                "gather_entries: entry out of range for {m}x{n}"
            )));
        }
        let out = Tensor::from_fn(1, idx.len(), |_, t| self.value(a).get(idx[t].0, idx[t].1));
        let needs = self.needs(a);
        Ok(self.push(Op::GatherEntries { x: a, idx }, out, needs))
    }

    /// Stack vertically: `(m1 x n, m2 x n) -> (m1+m2) x n`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m1, n1) = self.value(a).shape();
        let (m2, n2) = self.value(b).shape();
        if n1 != n2 {
            return Err(DiffError::Dimension(format!(
                "concat_rows: {m1}x{n1} over {m2}x{n2}"
            )));
        }
        let mut data = Vec::with_capacity((m1 + m2) * n1);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::from_vec(m1 + m2, n1, data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatRows(a, b), out, needs))
    }

    /// Stack horizontally: `(m x n1, m x n2) -> m x (n1+n2)`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m1, n1) = self.value(a).shape();
        let (m2, n2) = self.value(b).shape();
        if m1 != m2 {
            return Err(DiffError::Dimension(format!(
                "concat_cols: {m1}x{n1} beside {m2}x{n2}"
            )));
        }
        let out = Tensor::from_fn(m1, n1 + n2, |i, j| {
            if j < n1 {
                self.value(a).get(i, j)
            } else {
                self.value(b).get(i, j - n1)
            }
        });
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatCols(a, b), out, needs))
    }

    /// Reinterpret the row-major data under a new shape of equal size.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        if rows * cols != self.value(a).len() {
            return Err(DiffError::Dimension(format!(
                "reshape: {:?} to {rows}x{cols}",
                self.value(a).shape()
            )));
        }
        let out = Tensor::from_vec(rows, cols, self.value(a).data().to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape(a), out, needs))
    }

    /// Reverse pass from a scalar loss. Consumes the tape; returns one
    /// gradient per named parameter (zeros for parameters the loss never
    /// reached).
    pub fn backward(self, loss: Var) -> Result<Gradients<S>, DiffError> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(DiffError::Contract(format!(
                "backward: loss must be 1x1, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        for id in (0..=loss.0).rev() {
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue; // leaf gradients are collected below
            }
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.accumulate_inputs(id, &g, &mut grads);
        }

        let mut out = Gradients::new();
        for (name, var) in &self.named {
            let grad = grads[var.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[var.0].value.rows(), self.nodes[var.0].value.cols()));
            out.insert(name.clone(), grad);
        }
        Ok(out)
    }

    fn accumulate_inputs(&self, id: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let value = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Tensor<S>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign_scaled(&delta, S::one()),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                acc(*a, matmul_nt(g, value(*b)));
                acc(*b, matmul_tn(value(*a), g));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let da = Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * value(*b).get(i, j));
                let db = Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * value(*a).get(i, j));
                acc(*a, da);
                acc(*b, db);
            }
            Op::AddBias(a, bias) => {
                acc(*a, g.clone());
                let mut db = Tensor::zeros(g.rows(), 1);
                for i in 0..g.rows() {
                    let mut s = S::zero();
                    for j in 0..g.cols() {
                        s += g.get(i, j);
                    }
                    db.set(i, 0, s);
                }
                acc(*bias, db);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let mut dr = Tensor::zeros(1, g.cols());
                for j in 0..g.cols() {
                    let mut s = S::zero();
                    for i in 0..g.rows() {
                        s += g.get(i, j);
                    }
                    dr.set(0, j, s);
                }
                acc(*row, dr);
            }
            Op::MulCol(a, v) => {
                let da =
                    Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * value(*v).get(i, 0));
                let mut dv = Tensor::zeros(g.rows(), 1);
                for i in 0..g.rows() {
                    let mut s = S::zero();
                    for j in 0..g.cols() {
                        s += g.get(i, j) * value(*a).get(i, j);
                    }
                    dv.set(i, 0, s);
                }
                acc(*a, da);
                acc(*v, dv);
            }
            Op::MulRow(a, v) => {
                let da =
                    Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * value(*v).get(0, j));
                let mut dv = Tensor::zeros(1, g.cols());
                for j in 0..g.cols() {
                    let mut s = S::zero();
                    for i in 0..g.rows() {
                        s += g.get(i, j) * value(*a).get(i, j);
                    }
                    dv.set(0, j, s);
                }
                acc(*a, da);
                acc(*v, dv);
            }
            Op::Scale(a, k) => acc(*a, g.map(|v| v * *k)),
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                let da = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                    let s = y.get(i, j);
                    g.get(i, j) * s * (S::one() - s)
                });
                acc(*a, da);
            }
            Op::Relu(a) => {
                let da = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                    if value(*a).get(i, j) > S::zero() {
                        g.get(i, j)
                    } else {
                        S::zero()
                    }
                });
                acc(*a, da);
            }
            Op::Log(a) => {
                let da =
                    Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) / value(*a).get(i, j));
                acc(*a, da);
            }
            Op::RowSoftmax { x, mask } => {
                let y = &self.nodes[id].value;
                let mut dx = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let mut dot = S::zero();
                    for j in 0..g.cols() {
                        if unmasked(mask.as_deref(), j) {
                            dot += g.get(i, j) * y.get(i, j);
                        }
                    }
                    for j in 0..g.cols() {
                        if unmasked(mask.as_deref(), j) {
                            dx.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::RowLogSoftmax { x, mask } => {
                let y = &self.nodes[id].value;
                let mut dx = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let mut gsum = S::zero();
                    for j in 0..g.cols() {
                        if unmasked(mask.as_deref(), j) {
                            gsum += g.get(i, j);
                        }
                    }
                    for j in 0..g.cols() {
                        if unmasked(mask.as_deref(), j) {
                            let p = y.get(i, j).exp();
                            dx.set(i, j, g.get(i, j) - p * gsum);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::LogSumExp(a) => {
                let y = self.nodes[id].value.item();
                let gv = g.item();
                let da = value(*a).map(|v| gv * (v - y).exp());
                acc(*a, da);
            }
            Op::Sum(a) => {
                let gv = g.item();
                let da = Tensor::from_fn(value(*a).rows(), value(*a).cols(), |_, _| gv);
                acc(*a, da);
            }
            Op::MeanCols { x, subset } => {
                let (m, n) = value(*x).shape();
                let mut dx = Tensor::zeros(m, n);
                if !subset.is_empty() {
                    let inv = S::one() / S::of(subset.len() as f64);
                    for &j in subset {
                        for i in 0..m {
                            let cur = dx.get(i, j);
                            dx.set(i, j, cur + g.get(i, 0) * inv);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::GatherCols { x, idx } => {
                let (m, n) = value(*x).shape();
                let mut dx = Tensor::zeros(m, n);
                for (t, &j) in idx.iter().enumerate() {
                    for i in 0..m {
                        let cur = dx.get(i, j);
                        dx.set(i, j, cur + g.get(i, t));
                    }
                }
                acc(*x, dx);
            }
            Op::ScatterCols { x, idx } => {
                let (m, _) = value(*x).shape();
                let mut dx = Tensor::zeros(m, idx.len());
                for (t, &j) in idx.iter().enumerate() {
                    for i in 0..m {
                        dx.set(i, t, g.get(i, j));
                    }
                }
                acc(*x, dx);
            }
            Op::GatherEntries { x, idx } => {
                let (m, n) = value(*x).shape();
                let mut dx = Tensor::zeros(m, n);
                for (t, &(i, j)) in idx.iter().enumerate() {
                    let cur = dx.get(i, j);
                    dx.set(i, j, cur + g.get(0, t));
                }
                acc(*x, dx);
            }
            Op::ConcatRows(a, b) => {
                let m1 = value(*a).rows();
                let n = g.cols();
                let da = Tensor::from_fn(m1, n, |i, j| g.get(i, j));
                let db = Tensor::from_fn(g.rows() - m1, n, |i, j| g.get(i + m1, j));
                acc(*a, da);
                acc(*b, db);
            }
            Op::ConcatCols(a, b) => {
                let n1 = value(*a).cols();
                let m = g.rows();
                let da = Tensor::from_fn(m, n1, |i, j| g.get(i, j));
                let db = Tensor::from_fn(m, g.cols() - n1, |i, j| g.get(i, j + n1));
                acc(*a, da);
                acc(*b, db);
            }
            Op::Reshape(a) => {
                let (m, n) = value(*a).shape();
                let da = Tensor::from_vec(m, n, g.data().to_vec()).expect("reshape grad");
                acc(*a, da);
            }
        }
    }
}

fn unmasked(mask: Option<&[bool]>, j: usize) -> bool {
    mask.map_or(true, |m| m[j])
}

fn softmax_forward<S: Real>(
    x: &Tensor<S>,
    mask: Option<&[bool]>,
    log_mode: bool,
) -> Result<Tensor<S>, DiffError> {
    if let Some(m) = mask {
        if m.len() != x.cols() {
            return Err(DiffError::Dimension(format!(
                "row_softmax: mask length {} for {} columns",
                m.len(),
                x.cols()
            )));
        }
    }
    let (rows, cols) = x.shape();
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..rows {
        let mut max = S::neg_infinity();
        for j in 0..cols {
            if unmasked(mask, j) {
                max = max.max(x.get(i, j));
            }
        }
        if max == S::neg_infinity() {
            continue; // fully masked row stays zero
        }
        let mut denom = S::zero();
        for j in 0..cols {
            if unmasked(mask, j) {
                denom += (x.get(i, j) - max).exp();
            }
        }
        let log_denom = denom.ln();
        for j in 0..cols {
            if unmasked(mask, j) {
                let shifted = x.get(i, j) - max;
                let v = if log_mode {
                    shifted - log_denom
                } else {
                    shifted.exp() / denom
                };
                out.set(i, j, v);
            }
        }
    }
    Ok(out)
}
