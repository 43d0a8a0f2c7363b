//! Reverse-mode automatic differentiation over real 2-D tensors.
//!
//! A [`Tape`] records every operation as it is evaluated (define-by-run).
//! Leaves are either parameters, which receive gradients, or inputs, which
//! are constants of the graph. [`Tape::backward`] walks the tape in reverse
//! and leaves `d loss / d param` in a buffer per parameter.
//!
//! ```
//! use ncmimo_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::row(&[1.0, -2.0, 3.0]));
//! let loss = tape.sum_sq(x);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
//! ```
//!
//! Complex quantities are carried as separate real and imaginary tensors
//! (see [`complex`]); gradients are plain real partials of each plane.

pub mod complex;
mod gradcheck;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, grad_check_sampled};

/// Epsilon added to the variance inside batch normalization.
pub const BN_EPS: f64 = 1e-5;

/// Dense row-major real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::arg("tensor data length must equal rows*cols"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    /// A single-row tensor.
    pub fn row(values: &[f64]) -> Self {
        Self { rows: 1, cols: values.len(), data: values.to_vec() }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The single value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Parameter,
    Input,
    Intermediate,
}

/// Batch normalization mode.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Normalize with statistics of the current batch.
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalar(Var, Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    SumSq(Var),
    ColMean(Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Bmm {
        a: Var,
        b: Var,
        dims: (usize, usize, usize),
        trans_b: bool,
    },
    BlockSum {
        x: Var,
        rg: usize,
        cg: usize,
    },
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        train: bool,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    role: Role,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Role::Parameter, true, Op::Leaf)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Role::Input, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn role(&self, v: Var) -> Role {
        self.nodes[v.0].role
    }

    /// Gradient of the last [`backward`](Tape::backward) loss with respect
    /// to a parameter.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-feature mean and biased variance seen by a train-mode batchnorm.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm { batch_mean, batch_var, train: true, .. } => Some((batch_mean, batch_var)),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, role: Role, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, role, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, Role::Intermediate, rg, op)
    }

    fn v(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(sa)
    }

    fn scalar_check(&self, op: &'static str, s: Var) -> Result<()> {
        if self.shape(s) != (1, 1) {
            return Err(Error::shape(op, self.shape(s), (1, 1)));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(x);
        let data = self.v(x).iter().map(|&a| f(a)).collect();
        self.derived(Tensor { rows: r, cols: c, data }, &[x], op)
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (r, c) = self.same_shape(name, a, b)?;
        let data = self.v(a).iter().zip(self.v(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.derived(Tensor { rows: r, cols: c, data }, &[a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&mut self, name: &'static str, x: Var, row: Var, sign: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(row) != (1, c) {
            return Err(Error::shape(name, (r, c), self.shape(row)));
        }
        let rv = self.v(row);
        let mut data = self.v(x).to_vec();
        for chunk in data.chunks_mut(c.max(1)) {
            for (d, b) in chunk.iter_mut().zip(rv) {
                *d += sign * b;
            }
        }
        let op = if sign > 0.0 { Op::AddRow(x, row) } else { Op::SubRow(x, row) };
        Ok(self.derived(Tensor { rows: r, cols: c, data }, &[x, row], op))
    }

    /// `x + row` with a 1 x cols row broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", x, row, 1.0)
    }

    /// `x - row` with a 1 x cols row broadcast over every row of `x`.
    pub fn sub_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("sub_row", x, row, -1.0)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |a| a * c, Op::Scale(x, c))
    }

    /// Add a constant.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |a| a + c, Op::AddScalar(x))
    }

    /// Multiply every entry of `x` by the 1x1 node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        self.scalar_check("mul_scalar", s)?;
        let sv = self.v(s)[0];
        Ok(self.map(x, |a| a * sv, Op::MulScalar(x, s)))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, libm::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.map(x, libm::log, Op::Log(x))
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.map(x, |a| libm::pow(a, p), Op::Powf(x, p))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |a| if a > 0.0 { a } else { 0.0 }, Op::Relu(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.v(x).iter().sum();
        self.derived(Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.v(x).len().max(1) as f64;
        let s: f64 = self.v(x).iter().sum();
        self.derived(Tensor::scalar(s / n), &[x], Op::Mean(x))
    }

    /// Sum of squares (squared Frobenius norm).
    pub fn sum_sq(&mut self, x: Var) -> Var {
        let s = self.v(x).iter().map(|a| a * a).sum();
        self.derived(Tensor::scalar(s), &[x], Op::SumSq(x))
    }

    /// Mean over rows, giving a 1 x cols row.
    pub fn col_mean(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r == 0 {
            return Err(Error::arg("col_mean of empty tensor"));
        }
        let mut out = vec![0.0; c];
        for row in self.v(x).chunks(c.max(1)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        Ok(self.derived(Tensor { rows: 1, cols: c, data: out }, &[x], Op::ColMean(x)))
    }

    /// `(p, q) x (q, r)` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((p, q), (q2, r)) = (self.shape(a), self.shape(b));
        if q != q2 {
            return Err(Error::shape("matmul", (p, q), (q2, r)));
        }
        let mut out = vec![0.0; p * r];
        gemm_nn(self.v(a), self.v(b), &mut out, p, q, r);
        Ok(self.derived(Tensor { rows: p, cols: r, data: out }, &[a, b], Op::MatMul(a, b)))
    }

    /// `a b^T` for `a: (p, q)`, `b: (r, q)`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((p, q), (r, q2)) = (self.shape(a), self.shape(b));
        if q != q2 {
            return Err(Error::shape("matmul_nt", (p, q), (r, q2)));
        }
        let mut out = vec![0.0; p * r];
        gemm_nt(self.v(a), self.v(b), &mut out, p, q, r);
        Ok(self.derived(Tensor { rows: p, cols: r, data: out }, &[a, b], Op::MatMulNt(a, b)))
    }

    /// Batched product. Row `i` of `a` is an `r x s` matrix (row-major);
    /// row `i` of `b` is `s x c`, or `c x s` when `trans_b` is set, in which
    /// case `b` is used transposed. The result has rows of `r x c` matrices.
    pub fn bmm(&mut self, a: Var, b: Var, dims: (usize, usize, usize), trans_b: bool) -> Result<Var> {
        let (r, s, c) = dims;
        let ((ba, wa), (bb, wb)) = (self.shape(a), self.shape(b));
        if ba != bb || wa != r * s || wb != s * c {
            return Err(Error::shape("bmm", (ba, wa), (bb, wb)));
        }
        let mut out = vec![0.0; ba * r * c];
        let (av, bv) = (self.v(a), self.v(b));
        for n in 0..ba {
            let am = &av[n * r * s..(n + 1) * r * s];
            let bm = &bv[n * s * c..(n + 1) * s * c];
            let om = &mut out[n * r * c..(n + 1) * r * c];
            if trans_b {
                gemm_nt(am, bm, om, r, s, c);
            } else {
                gemm_nn(am, bm, om, r, s, c);
            }
        }
        let op = Op::Bmm { a, b, dims, trans_b };
        Ok(self.derived(Tensor { rows: ba, cols: r * c, data: out }, &[a, b], op))
    }

    /// Sum over non-overlapping `rg x cg` blocks.
    pub fn block_sum(&mut self, x: Var, rg: usize, cg: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if rg == 0 || cg == 0 || r % rg != 0 || c % cg != 0 {
            return Err(Error::shape("block_sum", (r, c), (rg, cg)));
        }
        let (or, oc) = (r / rg, c / cg);
        let mut out = vec![0.0; or * oc];
        let xv = self.v(x);
        for i in 0..r {
            for j in 0..c {
                out[(i / rg) * oc + j / cg] += xv[i * c + j];
            }
        }
        Ok(self.derived(Tensor { rows: or, cols: oc, data: out }, &[x], Op::BlockSum { x, rg, cg }))
    }

    /// Reinterpret the row-major data with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.0 * s.1 != rows * cols {
            return Err(Error::shape("reshape", s, (rows, cols)));
        }
        let data = self.v(x).to_vec();
        Ok(self.derived(Tensor { rows, cols, data }, &[x], Op::Reshape(x)))
    }

    /// Select rows by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::arg(alloc::format!("gather index {bad} out of range for {r} rows")));
        }
        let xv = self.v(x);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let out = Tensor { rows: idx.len(), cols: c, data };
        Ok(self.derived(out, &[x], Op::GatherRows(x, idx.to_vec())))
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((ra, ca), (rb, cb)) = (self.shape(a), self.shape(b));
        if ra != rb {
            return Err(Error::shape("concat_cols", (ra, ca), (rb, cb)));
        }
        let (av, bv) = (self.v(a), self.v(b));
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        let out = Tensor { rows: ra, cols: ca + cb, data };
        Ok(self.derived(out, &[a, b], Op::ConcatCols(a, b)))
    }

    /// `x W^T + b` for a batch `x: (batch, in)`, `W: (out, in)`, `b: (1, out)`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let ((n, din), (dout, din2), bs) = (self.shape(x), self.shape(w), self.shape(b));
        if din != din2 {
            return Err(Error::shape("affine", (n, din), (dout, din2)));
        }
        if bs != (1, dout) {
            return Err(Error::shape("affine bias", bs, (1, dout)));
        }
        let mut out = vec![0.0; n * dout];
        for row in out.chunks_mut(dout.max(1)) {
            row.copy_from_slice(self.v(b));
        }
        gemm_nt(self.v(x), self.v(w), &mut out, n, din, dout);
        Ok(self.derived(Tensor { rows: n, cols: dout, data: out }, &[x, w, b], Op::Affine { x, w, b }))
    }

    /// Batch normalization over rows followed by the per-feature affine
    /// `gamma * xhat + beta`. `gamma` and `beta` are `1 x features`.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_>) -> Result<Var> {
        let (n, f) = self.shape(x);
        for g in [gamma, beta] {
            if self.shape(g) != (1, f) {
                return Err(Error::shape("batchnorm", (n, f), self.shape(g)));
            }
        }
        if n == 0 {
            return Err(Error::arg("batchnorm on empty batch"));
        }
        let xv = self.v(x);
        let (mean, var, train) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; f];
                for row in xv.chunks(f) {
                    for (m, a) in mean.iter_mut().zip(row) {
                        *m += a;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for row in xv.chunks(f) {
                    for ((v, a), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = a - m;
                        *v += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != f || var.len() != f {
                    return Err(Error::shape("batchnorm running stats", (n, f), (mean.len(), var.len())));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
        let (gv, bv) = (self.v(gamma), self.v(beta));
        let mut xhat = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                let k = i * f + j;
                xhat[k] = (xv[k] - mean[j]) * inv_std[j];
                out[k] = gv[j] * xhat[k] + bv[j];
            }
        }
        let op = Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_mean: mean, batch_var: var, train };
        Ok(self.derived(Tensor { rows: n, cols: f, data: out }, &[x, gamma, beta], op))
    }

    /// Mean softmax cross-entropy of `logits: (batch, classes)` against
    /// integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.shape(logits);
        if labels.len() != n || n == 0 {
            return Err(Error::shape("softmax_cross_entropy", (n, k), (labels.len(), 1)));
        }
        if labels.iter().any(|&l| l >= k) {
            return Err(Error::arg("label out of range"));
        }
        let lv = self.v(logits);
        let mut probs = vec![0.0; n * k];
        let mut total = 0.0;
        for i in 0..n {
            let row = &lv[i * k..(i + 1) * k];
            let (lse, p) = (log_sum_exp(row), &mut probs[i * k..(i + 1) * k]);
            for (pj, &z) in p.iter_mut().zip(row) {
                *pj = libm::exp(z - lse);
            }
            total += lse - row[labels[i]];
        }
        let op = Op::SoftmaxCe { logits, labels: labels.to_vec(), probs };
        Ok(self.derived(Tensor::scalar(total / n as f64), &[logits], op))
    }

    /// Reverse accumulation from a scalar `loss`. Afterwards every parameter
    /// node has a gradient buffer (zero when the loss does not depend on it).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::arg("backward needs a scalar (1x1) loss"));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(nodes, &mut grads, i, &g);
            if node.role == Role::Parameter {
                grads[i] = Some(g);
            }
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.role == Role::Parameter {
                if grads[i].is_none() {
                    grads[i] = Some(vec![0.0; node.value.len()]);
                }
            } else {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(row.iter().map(|&z| libm::exp(z - m)).sum::<f64>())
}

/// out += a (p x q) * b (q x r)
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[k * r..(k + 1) * r]) {
                *o += aik * bv;
            }
        }
    }
}

/// out += a (p x q) * b^T where b is (r x q)
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        for j in 0..r {
            let brow = &b[j * q..(j + 1) * q];
            out[i * r + j] += dot(arow, brow);
        }
    }
}

/// out += a^T (q x p) * b where a is (p x q), b is (p x r)
fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let brow = &b[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            for (o, &bv) in out[k * r..(k + 1) * r].iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
    f(buf);
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let val = |v: Var| -> &[f64] { &nodes[v.0].value.data };
    let out = &nodes[i].value;
    let add_into = |dst: &mut [f64], src: &[f64], s: f64| {
        for (d, x) in dst.iter_mut().zip(src) {
            *d += s * x;
        }
    };
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |d| add_into(d, g, 1.0));
            accumulate(nodes, grads, *b, |d| add_into(d, g, 1.0));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |d| add_into(d, g, 1.0));
            accumulate(nodes, grads, *b, |d| add_into(d, g, -1.0));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(bv) {
                    *d += g * y;
                }
            });
            accumulate(nodes, grads, *b, |d| {
                for ((d, g), x) in d.iter_mut().zip(g).zip(av) {
                    *d += g * x;
                }
            });
        }
        Op::AddRow(x, row) | Op::SubRow(x, row) => {
            let sign = if matches!(nodes[i].op, Op::AddRow(..)) { 1.0 } else { -1.0 };
            let c = out.cols.max(1);
            accumulate(nodes, grads, *x, |d| add_into(d, g, 1.0));
            accumulate(nodes, grads, *row, |d| {
                for chunk in g.chunks(c) {
                    add_into(d, chunk, sign);
                }
            });
        }
        Op::Scale(x, c) => accumulate(nodes, grads, *x, |d| add_into(d, g, *c)),
        Op::AddScalar(x) | Op::Reshape(x) => accumulate(nodes, grads, *x, |d| add_into(d, g, 1.0)),
        Op::MulScalar(x, s) => {
            let sv = val(*s)[0];
            let xv = val(*x);
            accumulate(nodes, grads, *x, |d| add_into(d, g, sv));
            accumulate(nodes, grads, *s, |d| d[0] += dot(g, xv));
        }
        Op::Exp(x) => accumulate(nodes, grads, *x, |d| {
            for ((d, g), y) in d.iter_mut().zip(g).zip(&out.data) {
                *d += g * y;
            }
        }),
        Op::Log(x) => {
            let xv = val(*x);
            accumulate(nodes, grads, *x, |d| {
                for ((d, g), a) in d.iter_mut().zip(g).zip(xv) {
                    *d += g / a;
                }
            })
        }
        Op::Powf(x, p) => {
            let xv = val(*x);
            accumulate(nodes, grads, *x, |d| {
                for ((d, g), a) in d.iter_mut().zip(g).zip(xv) {
                    *d += g * p * libm::pow(*a, p - 1.0);
                }
            })
        }
        Op::Relu(x) => {
            let xv = val(*x);
            accumulate(nodes, grads, *x, |d| {
                for ((d, g), a) in d.iter_mut().zip(g).zip(xv) {
                    if *a > 0.0 {
                        *d += g;
                    }
                }
            })
        }
        Op::Sum(x) => accumulate(nodes, grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
        Op::Mean(x) => {
            let n = val(*x).len().max(1) as f64;
            accumulate(nodes, grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0] / n))
        }
        Op::SumSq(x) => {
            let xv = val(*x);
            accumulate(nodes, grads, *x, |d| add_into(d, xv, 2.0 * g[0]))
        }
        Op::ColMean(x) => {
            let (r, c) = nodes[x.0].value.shape();
            accumulate(nodes, grads, *x, |d| {
                for chunk in d.chunks_mut(c.max(1)) {
                    add_into(chunk, g, 1.0 / r as f64);
                }
            })
        }
        Op::MatMul(a, b) => {
            let ((p, q), r) = (nodes[a.0].value.shape(), out.cols);
            let (av, bv) = (val(*a), val(*b));
            // dA = G B^T, dB = A^T G
            accumulate(nodes, grads, *a, |d| gemm_nt(g, bv, d, p, r, q));
            accumulate(nodes, grads, *b, |d| gemm_tn(av, g, d, p, q, r));
        }
        Op::MatMulNt(a, b) => {
            let ((p, q), r) = (nodes[a.0].value.shape(), out.cols);
            let (av, bv) = (val(*a), val(*b));
            // out = A B^T: dA = G B, dB = G^T A
            accumulate(nodes, grads, *a, |d| gemm_nn(g, bv, d, p, r, q));
            accumulate(nodes, grads, *b, |d| gemm_tn(g, av, d, p, r, q));
        }
        Op::Bmm { a, b, dims, trans_b } => {
            let (r, s, c) = *dims;
            let batch = out.rows;
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, |d| {
                for n in 0..batch {
                    let gm = &g[n * r * c..(n + 1) * r * c];
                    let bm = &bv[n * s * c..(n + 1) * s * c];
                    let dm = &mut d[n * r * s..(n + 1) * r * s];
                    if *trans_b {
                        gemm_nn(gm, bm, dm, r, c, s);
                    } else {
                        gemm_nt(gm, bm, dm, r, c, s);
                    }
                }
            });
            accumulate(nodes, grads, *b, |d| {
                for n in 0..batch {
                    let gm = &g[n * r * c..(n + 1) * r * c];
                    let am = &av[n * r * s..(n + 1) * r * s];
                    let dm = &mut d[n * s * c..(n + 1) * s * c];
                    if *trans_b {
                        gemm_tn(gm, am, dm, r, c, s);
                    } else {
                        gemm_tn(am, gm, dm, r, s, c);
                    }
                }
            });
        }
        Op::BlockSum { x, rg, cg } => {
            let (r, c) = nodes[x.0].value.shape();
            let oc = out.cols;
            accumulate(nodes, grads, *x, |d| {
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[(i / rg) * oc + j / cg];
                    }
                }
            })
        }
        Op::GatherRows(x, idx) => {
            let c = out.cols;
            accumulate(nodes, grads, *x, |d| {
                for (k, &src) in idx.iter().enumerate() {
                    add_into(&mut d[src * c..(src + 1) * c], &g[k * c..(k + 1) * c], 1.0);
                }
            })
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (nodes[a.0].value.cols, nodes[b.0].value.cols);
            let w = ca + cb;
            accumulate(nodes, grads, *a, |d| {
                for (k, row) in g.chunks(w.max(1)).enumerate() {
                    add_into(&mut d[k * ca..(k + 1) * ca], &row[..ca], 1.0);
                }
            });
            accumulate(nodes, grads, *b, |d| {
                for (k, row) in g.chunks(w.max(1)).enumerate() {
                    add_into(&mut d[k * cb..(k + 1) * cb], &row[ca..], 1.0);
                }
            });
        }
        Op::Affine { x, w, b } => {
            let ((n, din), dout) = (nodes[x.0].value.shape(), out.cols);
            let (xv, wv) = (val(*x), val(*w));
            accumulate(nodes, grads, *x, |d| gemm_nn(g, wv, d, n, dout, din));
            accumulate(nodes, grads, *w, |d| gemm_tn(g, xv, d, n, dout, din));
            accumulate(nodes, grads, *b, |d| {
                for row in g.chunks(dout.max(1)) {
                    add_into(d, row, 1.0);
                }
            });
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, train, .. } => {
            let (n, f) = out.shape();
            let gv = val(*gamma);
            let mut sum_g = vec![0.0; f];
            let mut sum_gx = vec![0.0; f];
            for k in 0..n * f {
                sum_g[k % f] += g[k];
                sum_gx[k % f] += g[k] * xhat[k];
            }
            accumulate(nodes, grads, *gamma, |d| add_into(d, &sum_gx, 1.0));
            accumulate(nodes, grads, *beta, |d| add_into(d, &sum_g, 1.0));
            accumulate(nodes, grads, *x, |d| {
                let nf = n as f64;
                for k in 0..n * f {
                    let j = k % f;
                    let scale = gv[j] * inv_std[j];
                    d[k] +=
                        if *train { scale * (g[k] - sum_g[j] / nf - xhat[k] * sum_gx[j] / nf) } else { scale * g[k] };
                }
            });
        }
        Op::SoftmaxCe { logits, labels, probs } => {
            let k = nodes[logits.0].value.cols;
            let n = labels.len() as f64;
            accumulate(nodes, grads, *logits, |d| {
                for (row, &l) in labels.iter().enumerate() {
                    for j in 0..k {
                        let t = if j == l { 1.0 } else { 0.0 };
                        d[row * k + j] += g[0] * (probs[row * k + j] - t) / n;
                    }
                }
            });
        }
    }
}

#[cfg(test)]
mod tests;
