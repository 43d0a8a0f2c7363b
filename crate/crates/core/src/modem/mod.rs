//! Lookup-table encoder and soft-output decoders.
//!
//! Conventions frozen here (and in the artifact format):
//!
//! - A codebook row of length `m L` reshapes antenna-major into `X`
//!   (m x L): entries `[a L, (a + 1) L)` are antenna `a`, slots `0..L`.
//! - Messages are integers in `[0, 2^k)`; bit vectors map MSB first.
//! - Decoders return unnormalized logits; apply [`softmax`] for posteriors.

pub mod graph;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::networks::Network;
use crate::tensor::ComplexMatrix;

/// `(k, L, m, n)`: bits per message, slots, transmit and receive antennas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OperatingPoint {
    pub k: u32,
    pub l: usize,
    pub m: usize,
    pub n: usize,
}

impl OperatingPoint {
    pub fn new(k: u32, l: usize, m: usize, n: usize) -> Result<Self> {
        if k == 0 || k > 16 {
            return Err(Error::arg("k must be in 1..=16"));
        }
        if l == 0 || m == 0 || n == 0 {
            return Err(Error::arg("L, m and n must be at least 1"));
        }
        Ok(Self { k, l, m, n })
    }

    pub fn messages(&self) -> usize {
        1 << self.k
    }

    /// Codeword length `m L`.
    pub fn row_len(&self) -> usize {
        self.m * self.l
    }

    /// Real input width `2 n L` of a neural decoder.
    pub fn input_width(&self) -> usize {
        2 * self.n * self.l
    }
}

/// The unconstrained learnable codebook `C` (2^k x mL).
#[derive(Clone, Debug, PartialEq)]
pub struct RawCodebook {
    pub k: u32,
    pub m: usize,
    pub l: usize,
    pub c: ComplexMatrix,
}

impl RawCodebook {
    pub fn new(k: u32, m: usize, l: usize, c: ComplexMatrix) -> Result<Self> {
        if c.shape() != (1 << k, m * l) {
            return Err(Error::shape("raw codebook", c.shape(), (1 << k, m * l)));
        }
        if !c.is_finite() {
            return Err(Error::arg("raw codebook has non-finite entries"));
        }
        Ok(Self { k, m, l, c })
    }
}

/// A constellation `{X_0, .., X_{2^k - 1}}` of m x L codewords.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    k: u32,
    m: usize,
    l: usize,
    words: Vec<ComplexMatrix>,
}

impl Codebook {
    /// Wrap codewords as given, without centering or normalization. Used for
    /// fixtures such as orthonormal constellations and for loading.
    pub fn from_codewords(k: u32, words: Vec<ComplexMatrix>) -> Result<Self> {
        if words.len() != 1 << k {
            return Err(Error::arg("need exactly 2^k codewords"));
        }
        let (m, l) = words[0].shape();
        if m == 0 || l == 0 || words.iter().any(|w| w.shape() != (m, l)) {
            return Err(Error::arg("codewords must share a non-empty m x L shape"));
        }
        Ok(Self { k, m, l, words })
    }

    /// Rows of a 2^k x mL matrix, reshaped antenna-major, taken as-is.
    pub fn from_matrix(k: u32, m: usize, l: usize, c: &ComplexMatrix) -> Result<Self> {
        if c.shape() != (1 << k, m * l) {
            return Err(Error::shape("codebook", c.shape(), (1 << k, m * l)));
        }
        let row = m * l;
        let words = (0..1usize << k)
            .map(|i| {
                ComplexMatrix::from_parts(
                    m,
                    l,
                    c.re()[i * row..(i + 1) * row].to_vec(),
                    c.im()[i * row..(i + 1) * row].to_vec(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k, m, l, words })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[ComplexMatrix] {
        &self.words
    }

    /// The 2^k x mL matrix form (inverse of the antenna-major reshape).
    pub fn to_matrix(&self) -> ComplexMatrix {
        let row = self.m * self.l;
        let mut re = Vec::with_capacity(self.len() * row);
        let mut im = Vec::with_capacity(self.len() * row);
        for w in &self.words {
            re.extend_from_slice(w.re());
            im.extend_from_slice(w.im());
        }
        ComplexMatrix::from_parts(self.len(), row, re, im).expect("consistent shape")
    }

    /// `sum_m ||X_m||^2 / (2^k m L)`.
    pub fn average_power(&self) -> f64 {
        let total: f64 = self.words.iter().map(|w| w.frobenius_sq()).sum();
        total / (self.len() * self.m * self.l) as f64
    }

    /// Largest magnitude of the per-entry mean over messages (re or im).
    pub fn max_mean_entry(&self) -> f64 {
        let n = self.len() as f64;
        let mut worst: f64 = 0.0;
        for e in 0..self.m * self.l {
            let sr: f64 = self.words.iter().map(|w| w.re()[e]).sum();
            let si: f64 = self.words.iter().map(|w| w.im()[e]).sum();
            worst = worst.max((sr / n).abs()).max((si / n).abs());
        }
        worst
    }
}

/// Center (subtract the mean row) and scale to average power one, then
/// reshape each row into an m x L codeword.
pub fn normalize_codebook(raw: &RawCodebook) -> Result<Codebook> {
    let (rows, cols) = raw.c.shape();
    let mut re = raw.c.re().to_vec();
    let mut im = raw.c.im().to_vec();
    for (plane, src) in [(&mut re, raw.c.re()), (&mut im, raw.c.im())] {
        for j in 0..cols {
            let mean = (0..rows).map(|i| src[i * cols + j]).sum::<f64>() / rows as f64;
            for i in 0..rows {
                plane[i * cols + j] -= mean;
            }
        }
    }
    let energy: f64 = re.iter().chain(im.iter()).map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(Error::DegenerateCodebook);
    }
    let s = libm::sqrt((rows * cols) as f64 / energy);
    re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= s);
    Codebook::from_matrix(raw.k, raw.m, raw.l, &ComplexMatrix::from_parts(rows, cols, re, im)?)
}

/// The codeword for message `msg`.
pub fn encode(cb: &Codebook, msg: usize) -> Result<&ComplexMatrix> {
    cb.words.get(msg).ok_or_else(|| Error::arg(alloc::format!("message {msg} out of range for k = {}", cb.k)))
}

/// MSB-first bit vector to message index.
pub fn bits_to_message(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// Message index to its `k`-bit MSB-first representation.
pub fn message_to_bits(msg: usize, k: u32) -> Vec<bool> {
    (0..k).rev().map(|i| (msg >> i) & 1 == 1).collect()
}

/// `Y` flattened as all real parts (row-major) followed by all imaginary parts.
pub fn flatten_received(y: &ComplexMatrix) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * y.re().len());
    v.extend_from_slice(y.re());
    v.extend_from_slice(y.im());
    v
}

/// `||Y X^H||^2` without allocating.
fn correlation_energy(y: &ComplexMatrix, x: &ComplexMatrix) -> f64 {
    let l = y.cols();
    let (yr, yi, xr, xi) = (y.re(), y.im(), x.re(), x.im());
    let mut total = 0.0;
    for j in 0..y.rows() {
        for i in 0..x.rows() {
            let (mut pr, mut pi) = (0.0, 0.0);
            for t in 0..l {
                let (a, b) = (yr[j * l + t], yi[j * l + t]);
                let (c, d) = (xr[i * l + t], xi[i * l + t]);
                pr += a * c + b * d;
                pi += b * c - a * d;
            }
            total += pr * pr + pi * pi;
        }
    }
    total
}

/// pML logits `theta ||Y X_m^H||^2`.
pub fn pml_logits(y: &ComplexMatrix, cb: &Codebook, theta: f64) -> Result<Vec<f64>> {
    if !(theta >= 0.0) {
        return Err(Error::arg("theta must be non-negative"));
    }
    if y.cols() != cb.l {
        return Err(Error::shape("pml_logits", y.shape(), (y.rows(), cb.l)));
    }
    Ok(cb.words.iter().map(|x| theta * correlation_energy(y, x)).collect())
}

/// Probability vector by max-subtracted exponentiation.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest logit; ties go to the lowest index.
pub fn hard_decision(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Lower Cholesky factor of a Hermitian positive-definite matrix, stored as
/// split planes (row-major, upper part zero).
fn cholesky(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.rows();
    let mut r = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j).0;
        for k in 0..j {
            let (p, q) = r.get(j, k);
            d -= p * p + q * q;
        }
        if !(d > 0.0) {
            return Err(Error::Numeric("covariance is not positive definite".into()));
        }
        let djj = libm::sqrt(d);
        r.set(j, j, (djj, 0.0));
        for i in j + 1..n {
            let (mut sr, mut si) = a.get(i, j);
            for k in 0..j {
                // subtract R[i,k] * conj(R[j,k])
                let (p, q) = r.get(i, k);
                let (u, v) = r.get(j, k);
                sr -= p * u + q * v;
                si -= q * u - p * v;
            }
            r.set(i, j, (sr / djj, si / djj));
        }
    }
    Ok(r)
}

/// Exact non-coherent ML decoder state for one codebook and noise level.
///
/// Given `X`, each row `y_j` of `Y` is `CN(0, Lambda)` with
/// `Lambda = sigma2 I_L + X^H X / m`, so up to message-independent constants
/// `log p(Y | X) = -sum_j y_j Lambda^-1 y_j^H - n ln det Lambda`.
#[derive(Clone, Debug)]
pub struct ExactMl {
    l: usize,
    factors: Vec<ComplexMatrix>,
    log_dets: Vec<f64>,
}

impl ExactMl {
    pub fn new(cb: &Codebook, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::arg("exact ML needs sigma2 > 0"));
        }
        let (m, l) = (cb.m, cb.l);
        let mut factors = Vec::with_capacity(cb.len());
        let mut log_dets = Vec::with_capacity(cb.len());
        for x in &cb.words {
            let mut lam = x.conj_transpose().matmul(x)?.scale(1.0 / m as f64);
            for d in 0..l {
                let (a, b) = lam.get(d, d);
                lam.set(d, d, (a + sigma2, b));
            }
            let r = cholesky(&lam)?;
            log_dets.push((0..l).map(|d| 2.0 * libm::log(r.get(d, d).0)).sum());
            factors.push(r);
        }
        Ok(Self { l, factors, log_dets })
    }

    pub fn logits(&self, y: &ComplexMatrix) -> Result<Vec<f64>> {
        if y.cols() != self.l {
            return Err(Error::shape("exact_ml_logits", y.shape(), (y.rows(), self.l)));
        }
        let l = self.l;
        let n = y.rows() as f64;
        let mut w = vec![(0.0, 0.0); l];
        let out = self
            .factors
            .iter()
            .zip(&self.log_dets)
            .map(|(r, ld)| {
                let mut quad = 0.0;
                for j in 0..y.rows() {
                    // Solve R w = y_j^H by forward substitution; quad += |w|^2.
                    for i in 0..l {
                        let (mut sr, mut si) = (y.re()[j * l + i], -y.im()[j * l + i]);
                        for k in 0..i {
                            let (p, q) = r.get(i, k);
                            let (u, v) = w[k];
                            sr -= p * u - q * v;
                            si -= p * v + q * u;
                        }
                        let d = r.get(i, i).0;
                        w[i] = (sr / d, si / d);
                        quad += w[i].0 * w[i].0 + w[i].1 * w[i].1;
                    }
                }
                -quad - n * ld
            })
            .collect();
        Ok(out)
    }
}

/// Exact non-coherent ML log-likelihoods (see [`ExactMl`]).
pub fn exact_ml_logits(y: &ComplexMatrix, cb: &Codebook, sigma2: f64) -> Result<Vec<f64>> {
    ExactMl::new(cb, sigma2)?.logits(y)
}

/// Genie decoder with the true channel: `-||Y - H X_m||^2 / (2 sigma2)`.
pub fn coherent_ml_logits(y: &ComplexMatrix, h: &ComplexMatrix, cb: &Codebook, sigma2: f64) -> Result<Vec<f64>> {
    if !(sigma2 > 0.0) {
        return Err(Error::arg("coherent ML needs sigma2 > 0"));
    }
    if h.cols() != cb.m || h.rows() != y.rows() || y.cols() != cb.l {
        return Err(Error::shape("coherent_ml_logits", h.shape(), y.shape()));
    }
    cb.words.iter().map(|x| Ok(-y.sub(&h.matmul(x)?)?.frobenius_sq() / (2.0 * sigma2))).collect()
}

/// `(1 / (2^k m^2)) sum_m ||X_m X_m^H / L - I_m||^2`.
pub fn orthonormal_loss(cb: &Codebook) -> f64 {
    let (m, l) = (cb.m, cb.l);
    let mut total = 0.0;
    for x in &cb.words {
        for a in 0..m {
            for b in 0..m {
                let (mut gr, mut gi) = (0.0, 0.0);
                for t in 0..l {
                    let (p, q) = x.get(a, t);
                    let (u, v) = x.get(b, t);
                    gr += p * u + q * v;
                    gi += q * u - p * v;
                }
                let dr = gr / l as f64 - if a == b { 1.0 } else { 0.0 };
                let di = gi / l as f64;
                total += dr * dr + di * di;
            }
        }
    }
    total / (cb.len() * m * m) as f64
}

/// Neural decoder logits for one received block.
pub fn nn_logits(y: &ComplexMatrix, net: &Network) -> Result<Vec<f64>> {
    net.infer(&flatten_received(y))
}

/// Which decoder to run.
#[derive(Clone, Debug, PartialEq)]
pub enum DecoderSpec {
    /// Pseudo-ML correlation decoder with confidence `theta >= 0`.
    Pml { theta: f64 },
    /// MLP or residual MLP, per `Network::arch.family`.
    Nn(Network),
    /// Exact non-coherent ML at the evaluation noise level (oracle).
    ExactMl,
    /// Coherent ML with the true channel at the evaluation noise level (genie).
    CoherentMl,
}

impl DecoderSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DecoderSpec::Pml { .. } => "pml",
            DecoderSpec::Nn(net) => net.arch.family.name(),
            DecoderSpec::ExactMl => "exactml",
            DecoderSpec::CoherentMl => "coherent",
        }
    }

    /// Check the decoder against an operating point.
    pub fn validate(&self, op: &OperatingPoint) -> Result<()> {
        match self {
            DecoderSpec::Pml { theta } if !(*theta >= 0.0) => Err(Error::arg("pML theta must be >= 0")),
            DecoderSpec::Nn(net) => {
                net.validate()?;
                if net.arch.input_width != op.input_width() || net.arch.output_width != op.messages() {
                    return Err(Error::arg("network widths must be 2nL in and 2^k out"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Bind the decoder to a codebook and noise level for repeated decoding.
    pub fn prepare<'a>(&'a self, cb: &'a Codebook, sigma2: f64) -> Result<PreparedDecoder<'a>> {
        Ok(match self {
            DecoderSpec::Pml { theta } => {
                if !(*theta >= 0.0) {
                    return Err(Error::arg("pML theta must be >= 0"));
                }
                PreparedDecoder::Pml { cb, theta: *theta }
            }
            DecoderSpec::Nn(net) => PreparedDecoder::Nn(net),
            DecoderSpec::ExactMl => PreparedDecoder::ExactMl(ExactMl::new(cb, sigma2)?),
            DecoderSpec::CoherentMl => PreparedDecoder::CoherentMl { cb, sigma2 },
        })
    }
}

/// A decoder bound to its codebook and noise level.
#[derive(Clone, Debug)]
pub enum PreparedDecoder<'a> {
    Pml { cb: &'a Codebook, theta: f64 },
    Nn(&'a Network),
    ExactMl(ExactMl),
    CoherentMl { cb: &'a Codebook, sigma2: f64 },
}

impl PreparedDecoder<'_> {
    /// Logits for a received block. `h` is only read by the genie decoder.
    pub fn logits(&self, y: &ComplexMatrix, h: &ComplexMatrix) -> Result<Vec<f64>> {
        match self {
            PreparedDecoder::Pml { cb, theta } => pml_logits(y, cb, *theta),
            PreparedDecoder::Nn(net) => nn_logits(y, net),
            PreparedDecoder::ExactMl(d) => d.logits(y),
            PreparedDecoder::CoherentMl { cb, sigma2 } => coherent_ml_logits(y, h, cb, *sigma2),
        }
    }

    pub fn decide(&self, y: &ComplexMatrix, h: &ComplexMatrix) -> Result<usize> {
        Ok(hard_decision(&self.logits(y, h)?))
    }
}
