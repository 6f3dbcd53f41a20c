//! Dense matrices and a dynamic reverse-mode tape.
//!
//! A [`Tape`] owns every node created during a forward pass. Nodes are
//! addressed by [`NodeId`], an index into the tape, so the recorded order is
//! the execution order and [`Tape::backward`] simply walks it in reverse.
//!
//! ```
//! use stagewise_lora::autodiff::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
//! let x = tape.constant(Matrix::column(&[5.0, 6.0]));
//! let y = tape.matmul(w, x).unwrap();
//! let loss = tape.sum(y);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.value(y).data(), &[17.0, 39.0]);
//! assert_eq!(tape.grad(w).data(), &[5.0, 6.0, 5.0, 6.0]);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A `len x 1` column vector.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim("matmul", self.shape(), other.shape()));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Largest absolute elementwise difference. Shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::dim("max_abs_diff", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, self.shape(), other.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Index of a node on its [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sum(NodeId),
    /// Caches the softmax so backward is `probs - onehot`.
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    grad: Matrix,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TapeState {
    Recording,
    Backpropagated,
}

/// Dynamic computation record, rebuilt for every forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    state: TapeState,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            state: TapeState::Recording,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that accumulates gradient.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.leaf(value, true)
    }

    /// Leaf that never accumulates gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].grad
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    /// Scalar times matrix, the only broadcast supported.
    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.value(a).scale(s);
        let rg = self.requires_grad(a);
        self.push(value, rg, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.requires_grad(a);
        self.push(value, rg, Op::Relu(a))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let rg = self.requires_grad(a);
        self.push(value, rg, Op::Sum(a))
    }

    /// `-log softmax(logits)[label]` for a row or column vector of logits.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let z = self.value(logits);
        if z.rows() != 1 && z.cols() != 1 {
            return Err(Error::dim("softmax_cross_entropy", z.shape(), (z.len(), 1)));
        }
        if label >= z.len() {
            return Err(Error::Index {
                index: label,
                len: z.len(),
            });
        }
        let probs = softmax(z.data());
        let loss = -log_softmax_at(z.data(), label);
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            rg,
            Op::SoftmaxCrossEntropy { logits, label, probs },
        ))
    }

    /// Propagates d(loss)/d(node) into every node that requires gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward on an empty tape".into()));
        }
        if self.state == TapeState::Backpropagated {
            return Err(Error::State("backward called twice without reset".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.state = TapeState::Backpropagated;
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad.data[0] += 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let upstream = self.nodes[i].grad.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.requires_grad(a) {
                        let g = upstream.matmul(&self.value(b).transpose())?;
                        self.accumulate(a, &g);
                    }
                    if self.requires_grad(b) {
                        let g = self.value(a).transpose().matmul(&upstream)?;
                        self.accumulate(b, &g);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(a, &upstream);
                    self.accumulate(b, &upstream);
                }
                Op::Scale(a, s) => {
                    self.accumulate(a, &upstream.scale(s));
                }
                Op::Relu(a) => {
                    let mut g = upstream;
                    for (gv, &x) in g.data.iter_mut().zip(&self.nodes[a.0].value.data) {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    self.accumulate(a, &g);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(a).shape();
                    self.accumulate(a, &Matrix::filled(r, c, upstream.data[0]));
                }
                Op::SoftmaxCrossEntropy { logits, label, probs } => {
                    let (r, c) = self.value(logits).shape();
                    let mut g = Matrix::from_vec(r, c, probs)?;
                    g.data[label] -= 1.0;
                    self.accumulate(logits, &g.scale(upstream.data[0]));
                }
            }
        }
        Ok(())
    }

    /// Zeroes every gradient and re-arms backward.
    pub fn reset(&mut self) {
        for node in &mut self.nodes {
            node.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
        self.state = TapeState::Recording;
    }

    fn accumulate(&mut self, id: NodeId, g: &Matrix) {
        let node = &mut self.nodes[id.0];
        if node.requires_grad {
            node.grad.add_assign(g);
        }
    }

    fn push(&mut self, value: Matrix, requires_grad: bool, op: Op) -> NodeId {
        let grad = Matrix::zeros(value.rows, value.cols);
        self.nodes.push(Node {
            value,
            grad,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log softmax(z)[label]`, written as `(z_label - max) - ln(1 + rest)` so a
/// confident correct prediction keeps full precision.
fn log_softmax_at(z: &[f64], label: usize) -> f64 {
    let top = argmax_first(z);
    let max = z[top];
    let rest: f64 = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, v)| (v - max).exp())
        .sum();
    (z[label] - max) - rest.ln_1p()
}

fn argmax_first(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}
