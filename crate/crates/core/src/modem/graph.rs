//! Encoder and pML decoder recorded on an autodiff tape.
//!
//! Layouts: a codebook is a pair of `(2^k, m L)` planes (one codeword per
//! row, antenna-major); a batch of channel outputs is `(B, n L)`, one
//! row-major n x L block per row.

use crate::autodiff::complex::CVar;
use crate::autodiff::{Tape, Tensor, Var};
use crate::channel::ChannelBatch;
use crate::error::{Error, Result};
use crate::modem::OperatingPoint;

/// Register a raw codebook as trainable parameters.
pub fn raw_codebook_params(tape: &mut Tape, re: &Tensor, im: &Tensor) -> CVar {
    CVar::new(tape.param(re.clone()), tape.param(im.clone()))
}

/// Center and scale the raw codebook to average power one, on the tape.
pub fn normalize(tape: &mut Tape, raw: CVar) -> Result<CVar> {
    let (rows, cols) = tape.shape(raw.re);
    if tape.shape(raw.im) != (rows, cols) {
        return Err(Error::shape("normalize", (rows, cols), tape.shape(raw.im)));
    }
    let mr = tape.col_mean(raw.re)?;
    let mi = tape.col_mean(raw.im)?;
    let cr = tape.sub_row(raw.re, mr)?;
    let ci = tape.sub_row(raw.im, mi)?;
    let er = tape.sum_sq(cr);
    let ei = tape.sum_sq(ci);
    let energy = tape.add(er, ei)?;
    if !(tape.value(energy).item() > 0.0) {
        return Err(Error::DegenerateCodebook);
    }
    let per_entry = tape.scale(energy, 1.0 / (rows * cols) as f64);
    let s = tape.powf(per_entry, -0.5);
    Ok(CVar::new(tape.mul_scalar(cr, s)?, tape.mul_scalar(ci, s)?))
}

/// Codewords for a batch of messages, `(B, m L)`.
pub fn encode(tape: &mut Tape, cb: CVar, messages: &[usize]) -> Result<CVar> {
    Ok(CVar::new(tape.gather_rows(cb.re, messages)?, tape.gather_rows(cb.im, messages)?))
}

/// `Y_b = H_b X_b + Z_b` with the channel draws held constant.
pub fn transmit(tape: &mut Tape, x: CVar, op: &OperatingPoint, ch: &ChannelBatch) -> Result<CVar> {
    let b = ch.batch;
    let hs = op.n * op.m;
    let zs = op.n * op.l;
    let h =
        CVar::new(tape.input(Tensor::new(b, hs, ch.h_re.clone())?), tape.input(Tensor::new(b, hs, ch.h_im.clone())?));
    let z =
        CVar::new(tape.input(Tensor::new(b, zs, ch.z_re.clone())?), tape.input(Tensor::new(b, zs, ch.z_im.clone())?));
    let hx = tape.complex_bmm(h, x, (op.n, op.m, op.l))?;
    tape.complex_add(hx, z)
}

/// `||Y_b X_j^H||^2` for every batch row and codeword, `(B, 2^k)`.
pub fn correlation_energies(tape: &mut Tape, y: CVar, cb: CVar, op: &OperatingPoint) -> Result<Var> {
    let (b, _) = tape.shape(y.re);
    let yr = tape.reshape(y.re, b * op.n, op.l)?;
    let yi = tape.reshape(y.im, b * op.n, op.l)?;
    let words = op.messages() * op.m;
    let xr = tape.reshape(cb.re, words, op.l)?;
    let xi = tape.reshape(cb.im, words, op.l)?;
    let p = tape.complex_matmul_nh(CVar::new(yr, yi), CVar::new(xr, xi))?;
    let e = tape.complex_abs_sq(p)?;
    tape.block_sum(e, op.n, op.m)
}

/// pML logits `theta ||Y X^H||^2` with `theta = exp(phi)`.
pub fn pml_logits(tape: &mut Tape, y: CVar, cb: CVar, phi: Var, op: &OperatingPoint) -> Result<(Var, Var)> {
    let theta = tape.exp(phi);
    let e = correlation_energies(tape, y, cb, op)?;
    Ok((tape.mul_scalar(e, theta)?, theta))
}

/// Network input rows `[re(Y) | im(Y)]`, `(B, 2 n L)`.
pub fn flatten(tape: &mut Tape, y: CVar) -> Result<Var> {
    tape.concat_cols(y.re, y.im)
}

/// Orthonormal loss of a normalized codebook, `(1, 1)`.
pub fn orthonormal_loss(tape: &mut Tape, cb: CVar, op: &OperatingPoint) -> Result<Var> {
    let (count, m, l) = (op.messages(), op.m, op.l);
    let g = tape.complex_bmm_nh(cb, cb, (m, l, m))?;
    let gr = tape.scale(g.re, 1.0 / l as f64);
    let gi = tape.scale(g.im, 1.0 / l as f64);
    let mut eye = Tensor::zeros(count, m * m);
    for r in 0..count {
        for a in 0..m {
            eye.data_mut()[r * m * m + a * m + a] = 1.0;
        }
    }
    let eye = tape.input(eye);
    let dr = tape.sub(gr, eye)?;
    let dev = tape.complex_frobenius_sq(CVar::new(dr, gi))?;
    Ok(tape.scale(dev, 1.0 / (count * m * m) as f64))
}
