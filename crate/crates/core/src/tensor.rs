//! Dense complex matrices stored as split real/imaginary planes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Row-major complex matrix with separate real and imaginary arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, re: vec![0.0; rows * cols], im: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out.re[i * n + i] = 1.0;
        }
        out
    }

    pub fn from_parts(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != rows * cols || im.len() != rows * cols {
            return Err(Error::arg("re/im length must equal rows*cols"));
        }
        Ok(Self { rows, cols, re, im })
    }

    /// Build from `(re, im)` pairs in row-major order.
    pub fn from_pairs(rows: usize, cols: usize, entries: &[(f64, f64)]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::arg("entry count must equal rows*cols"));
        }
        let re = entries.iter().map(|e| e.0).collect();
        let im = entries.iter().map(|e| e.1).collect();
        Ok(Self { rows, cols, re, im })
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

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    /// Both planes mutably at once.
    pub fn planes_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.re, self.im)
    }

    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        let k = i * self.cols + j;
        (self.re[k], self.im[k])
    }

    pub fn set(&mut self, i: usize, j: usize, value: (f64, f64)) {
        let k = i * self.cols + j;
        self.re[k] = value.0;
        self.im[k] = value.1;
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|v| v.is_finite())
    }

    pub fn conj_transpose(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let (a, b) = self.get(i, j);
                out.set(j, i, (a, -b));
            }
        }
        out
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (n, p, q) = (self.rows, self.cols, other.cols);
        let mut out = ComplexMatrix::zeros(n, q);
        for i in 0..n {
            for k in 0..p {
                let ar = self.re[i * p + k];
                let ai = self.im[i * p + k];
                let brow = k * q;
                let orow = i * q;
                for j in 0..q {
                    let br = other.re[brow + j];
                    let bi = other.im[brow + j];
                    out.re[orow + j] += ar * br - ai * bi;
                    out.im[orow + j] += ar * bi + ai * br;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip(other, "sub", |a, b| a - b)
    }

    fn zip(&self, other: &ComplexMatrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<ComplexMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        let re = self.re.iter().zip(&other.re).map(|(a, b)| f(*a, *b)).collect();
        let im = self.im.iter().zip(&other.im).map(|(a, b)| f(*a, *b)).collect();
        Ok(ComplexMatrix { rows: self.rows, cols: self.cols, re, im })
    }

    pub fn scale(&self, s: f64) -> ComplexMatrix {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            re: self.re.iter().map(|v| v * s).collect(),
            im: self.im.iter().map(|v| v * s).collect(),
        }
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        frobenius_sq(self)
    }

    /// Same entries viewed with a different shape (row-major order kept).
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<ComplexMatrix> {
        if rows * cols != self.re.len() {
            return Err(Error::shape("reshape", self.shape(), (rows, cols)));
        }
        Ok(ComplexMatrix { rows, cols, re: self.re.clone(), im: self.im.clone() })
    }
}

/// Squared Frobenius norm `sum |a_ij|^2`.
pub fn frobenius_sq(a: &ComplexMatrix) -> f64 {
    a.re.iter().chain(a.im.iter()).map(|v| v * v).sum()
}

pub fn conj_transpose(a: &ComplexMatrix) -> ComplexMatrix {
    a.conj_transpose()
}

pub fn matmul(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    a.matmul(b)
}

/// i.i.d. circularly-symmetric complex Gaussian entries `CN(0, variance)`.
///
/// Each entry consumes one Box-Muller pair, real part first.
pub fn sample_cn(rows: usize, cols: usize, variance: f64, rng: &mut RngStream) -> Result<ComplexMatrix> {
    if !(variance >= 0.0) {
        return Err(Error::arg("variance must be non-negative"));
    }
    let mut out = ComplexMatrix::zeros(rows, cols);
    fill_cn(&mut out.re, &mut out.im, variance, rng);
    Ok(out)
}

pub(crate) fn fill_cn(re: &mut [f64], im: &mut [f64], variance: f64, rng: &mut RngStream) {
    let sd = libm::sqrt(variance / 2.0);
    for (r, i) in re.iter_mut().zip(im.iter_mut()) {
        let (a, b) = rng.normal_pair();
        *r = sd * a;
        *i = sd * b;
    }
}

/// Codewords `X` (m x L) with `X X^H = L I_m`, built by Gram-Schmidt on the
/// rows of a Gaussian draw.
pub fn random_orthonormal_codewords(
    count: usize,
    m: usize,
    l: usize,
    rng: &mut RngStream,
) -> Result<Vec<ComplexMatrix>> {
    if m > l {
        return Err(Error::arg("need m <= L for orthonormal rows"));
    }
    if m == 0 {
        return Err(Error::arg("m must be positive"));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut x = sample_cn(m, l, 1.0, rng)?;
        if orthonormalize_rows(&mut x) {
            out.push(x.scale(libm::sqrt(l as f64)));
        }
    }
    Ok(out)
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Returns false if
/// the rows are numerically dependent.
fn orthonormalize_rows(x: &mut ComplexMatrix) -> bool {
    let (m, l) = x.shape();
    for i in 0..m {
        for _pass in 0..2 {
            for j in 0..i {
                // c = <row_i, row_j> = sum row_i * conj(row_j)
                let (mut cr, mut ci) = (0.0, 0.0);
                for t in 0..l {
                    let (ar, ai) = x.get(i, t);
                    let (br, bi) = x.get(j, t);
                    cr += ar * br + ai * bi;
                    ci += ai * br - ar * bi;
                }
                for t in 0..l {
                    let (ar, ai) = x.get(i, t);
                    let (br, bi) = x.get(j, t);
                    x.set(i, t, (ar - (cr * br - ci * bi), ai - (cr * bi + ci * br)));
                }
            }
        }
        let norm: f64 = libm::sqrt(
            (0..l)
                .map(|t| {
                    let (a, b) = x.get(i, t);
                    a * a + b * b
                })
                .sum(),
        );
        if norm < 1e-8 {
            return false;
        }
        for t in 0..l {
            let (a, b) = x.get(i, t);
            x.set(i, t, (a / norm, b / norm));
        }
    }
    true
}
