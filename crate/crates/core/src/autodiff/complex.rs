//! Complex arithmetic on the tape as pairs of real nodes.

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// A complex tensor on the tape: real and imaginary planes of equal shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl CVar {
    pub fn new(re: Var, im: Var) -> Self {
        Self { re, im }
    }
}

impl Tape {
    /// `(A B)re = Are Bre - Aim Bim`, `(A B)im = Are Bim + Aim Bre`.
    pub fn complex_matmul(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let rr = self.matmul(a.re, b.re)?;
        let ii = self.matmul(a.im, b.im)?;
        let ri = self.matmul(a.re, b.im)?;
        let ir = self.matmul(a.im, b.re)?;
        Ok(CVar::new(self.sub(rr, ii)?, self.add(ri, ir)?))
    }

    /// `A B^H` for `A: (p, q)`, `B: (r, q)`.
    pub fn complex_matmul_nh(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        // sum_l a (conj b) = (ar br + ai bi) + i (ai br - ar bi)
        let rr = self.matmul_nt(a.re, b.re)?;
        let ii = self.matmul_nt(a.im, b.im)?;
        let ir = self.matmul_nt(a.im, b.re)?;
        let ri = self.matmul_nt(a.re, b.im)?;
        Ok(CVar::new(self.add(rr, ii)?, self.sub(ir, ri)?))
    }

    /// Batched complex product, see [`Tape::bmm`] for the layout.
    pub fn complex_bmm(&mut self, a: CVar, b: CVar, dims: (usize, usize, usize)) -> Result<CVar> {
        let rr = self.bmm(a.re, b.re, dims, false)?;
        let ii = self.bmm(a.im, b.im, dims, false)?;
        let ri = self.bmm(a.re, b.im, dims, false)?;
        let ir = self.bmm(a.im, b.re, dims, false)?;
        Ok(CVar::new(self.sub(rr, ii)?, self.add(ri, ir)?))
    }

    /// Batched `A_i B_i^H` with `A_i: r x s`, `B_i: c x s`.
    pub fn complex_bmm_nh(&mut self, a: CVar, b: CVar, dims: (usize, usize, usize)) -> Result<CVar> {
        let rr = self.bmm(a.re, b.re, dims, true)?;
        let ii = self.bmm(a.im, b.im, dims, true)?;
        let ir = self.bmm(a.im, b.re, dims, true)?;
        let ri = self.bmm(a.re, b.im, dims, true)?;
        Ok(CVar::new(self.add(rr, ii)?, self.sub(ir, ri)?))
    }

    /// Elementwise `|z|^2`.
    pub fn complex_abs_sq(&mut self, z: CVar) -> Result<Var> {
        let a = self.mul(z.re, z.re)?;
        let b = self.mul(z.im, z.im)?;
        self.add(a, b)
    }

    /// Squared Frobenius norm of a complex tensor.
    pub fn complex_frobenius_sq(&mut self, z: CVar) -> Result<Var> {
        let a = self.sum_sq(z.re);
        let b = self.sum_sq(z.im);
        self.add(a, b)
    }

    pub fn complex_add(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar::new(self.add(a.re, b.re)?, self.add(a.im, b.im)?))
    }
}
