//! Block Rayleigh fading MIMO channel `Y = H X + Z`.
//!
//! `H` (n x m) has i.i.d. `CN(0, 1/m)` entries and stays fixed for the `L`
//! slots of one codeword; `Z` (n x L) is i.i.d. `CN(0, sigma2)`. With unit
//! average transmit power the SNR is `1 / sigma2`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{fill_cn, ComplexMatrix};

/// Antenna counts, block length and noise level of the channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    /// Transmit antennas.
    pub m: usize,
    /// Receive antennas.
    pub n: usize,
    /// Time slots per codeword (coherence window).
    pub l: usize,
    /// Noise variance per complex entry.
    pub sigma2: f64,
}

impl ChannelConfig {
    pub fn new(m: usize, n: usize, l: usize, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::arg("sigma2 must be positive and finite"));
        }
        Self::noiseless(m, n, l).map(|c| Self { sigma2, ..c })
    }

    pub fn from_snr_db(m: usize, n: usize, l: usize, snr_db: f64) -> Result<Self> {
        Self::new(m, n, l, sigma2_from_snr_db(snr_db))
    }

    /// Zero-noise configuration; test fixtures only.
    pub fn noiseless(m: usize, n: usize, l: usize) -> Result<Self> {
        if m == 0 || n == 0 || l == 0 {
            return Err(Error::arg("m, n and L must be at least 1"));
        }
        Ok(Self { m, n, l, sigma2: 0.0 })
    }
}

/// `10^(-snr_db / 10)`.
pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    libm::pow(10.0, -snr_db / 10.0)
}

/// Output of one codeword transmission.
#[derive(Clone, Debug, PartialEq)]
pub struct Transmission {
    /// Received block, n x L.
    pub y: ComplexMatrix,
    /// Channel realization, n x m. Side information for genie baselines and
    /// diagnostics only; learned decoders never see it.
    pub h: ComplexMatrix,
}

/// Draw one channel realization `H` and then the noise block `Z`.
pub fn sample_block(cfg: &ChannelConfig, rng: &mut RngStream) -> (ComplexMatrix, ComplexMatrix) {
    let mut h = ComplexMatrix::zeros(cfg.n, cfg.m);
    let mut z = ComplexMatrix::zeros(cfg.n, cfg.l);
    draw_into(cfg, rng, &mut h, &mut z);
    (h, z)
}

fn draw_into(cfg: &ChannelConfig, rng: &mut RngStream, h: &mut ComplexMatrix, z: &mut ComplexMatrix) {
    let hv = 1.0 / cfg.m as f64;
    let (hr, hi) = h.planes_mut();
    fill_cn(hr, hi, hv, rng);
    let (zr, zi) = z.planes_mut();
    fill_cn(zr, zi, cfg.sigma2, rng);
}

/// `H X + Z` for explicit `H` and `Z`.
pub fn apply_channel(x: &ComplexMatrix, h: &ComplexMatrix, z: &ComplexMatrix) -> Result<ComplexMatrix> {
    h.matmul(x)?.add(z)
}

/// Send one codeword through a fresh channel realization.
pub fn transmit(x: &ComplexMatrix, cfg: &ChannelConfig, rng: &mut RngStream) -> Result<Transmission> {
    if x.shape() != (cfg.m, cfg.l) {
        return Err(Error::shape("transmit", x.shape(), (cfg.m, cfg.l)));
    }
    let (h, z) = sample_block(cfg, rng);
    let y = apply_channel(x, &h, &z)?;
    Ok(Transmission { y, h })
}

/// Channel draws for a training batch, flattened one message per row.
///
/// Row `b` of `h_*` is `H_b` (n x m, row-major) and row `b` of `z_*` is
/// `Z_b` (n x L). Draw order matches repeated [`sample_block`] calls.
#[derive(Clone, Debug)]
pub struct ChannelBatch {
    pub batch: usize,
    pub h_re: Vec<f64>,
    pub h_im: Vec<f64>,
    pub z_re: Vec<f64>,
    pub z_im: Vec<f64>,
}

pub fn sample_batch(cfg: &ChannelConfig, batch: usize, rng: &mut RngStream) -> ChannelBatch {
    let (hs, zs) = (cfg.n * cfg.m, cfg.n * cfg.l);
    let mut out = ChannelBatch {
        batch,
        h_re: vec![0.0; batch * hs],
        h_im: vec![0.0; batch * hs],
        z_re: vec![0.0; batch * zs],
        z_im: vec![0.0; batch * zs],
    };
    let hv = 1.0 / cfg.m as f64;
    for b in 0..batch {
        fill_cn(&mut out.h_re[b * hs..(b + 1) * hs], &mut out.h_im[b * hs..(b + 1) * hs], hv, rng);
        fill_cn(&mut out.z_re[b * zs..(b + 1) * zs], &mut out.z_im[b * zs..(b + 1) * zs], cfg.sigma2, rng);
    }
    out
}
