//! Monte-Carlo block error rate with Wilson score intervals.
//!
//! Large runs are split into chunks; chunk `c` of a point always draws from
//! `base.substream(c)`, so totals do not depend on how chunks are scheduled
//! across threads.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::channel::{sample_block, ChannelConfig};
use crate::error::{Error, Result};
use crate::modem::{Codebook, DecoderSpec, PreparedDecoder};
use crate::rng::RngStream;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959964;

/// Trials per chunk in chunked evaluation.
pub const DEFAULT_CHUNK: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlerPoint {
    pub snr_db: f64,
    pub trials: u64,
    pub errors: u64,
    pub bler: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl BlerPoint {
    pub fn new(snr_db: f64, errors: u64, trials: u64) -> Result<Self> {
        let (ci_lo, ci_hi) = wilson_interval(errors, trials, Z95)?;
        Ok(Self { snr_db, trials, errors, bler: errors as f64 / trials as f64, ci_lo, ci_hi })
    }

    /// Binomial standard error `sqrt(p (1 - p) / trials)`.
    pub fn std_error(&self) -> f64 {
        libm::sqrt(self.bler * (1.0 - self.bler) / self.trials as f64)
    }
}

/// Wilson score interval for `errors` out of `trials` at normal quantile `z`.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> Result<(f64, f64)> {
    if trials == 0 || errors > trials {
        return Err(Error::arg("wilson_interval needs 0 <= errors <= trials, trials >= 1"));
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * libm::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    let lo = if errors == 0 { 0.0 } else { (centre - half).max(0.0).min(p) };
    let hi = if errors == trials { 1.0 } else { (centre + half).min(1.0).max(p) };
    Ok((lo, hi))
}

/// BLER points of one decoder over increasing SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct BlerCurve {
    pub decoder: String,
    pub points: Vec<BlerPoint>,
}

/// `start, start + step, ..` up to `stop` inclusive (with a small tolerance
/// for accumulated rounding).
pub fn snr_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(Error::arg("SNR grid needs step > 0 and start <= stop"));
    }
    let count = libm::floor((stop - start) / step + 1e-9) as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

/// Error counts of several decoders on the same `trials` transmissions.
/// Each trial draws the message, then `H`, then `Z`.
pub fn count_errors(
    cb: &Codebook,
    decoders: &[PreparedDecoder<'_>],
    cfg: &ChannelConfig,
    trials: u64,
    rng: &mut RngStream,
) -> Result<Vec<u64>> {
    if cfg.m != cb.m() || cfg.l != cb.l() {
        return Err(Error::shape("count_errors", (cfg.m, cfg.l), (cb.m(), cb.l())));
    }
    let mut errors = vec![0u64; decoders.len()];
    let count = cb.len() as u64;
    for _ in 0..trials {
        let msg = rng.below(count) as usize;
        let (h, z) = sample_block(cfg, rng);
        let y = h.matmul(&cb.words()[msg])?.add(&z)?;
        for (e, d) in errors.iter_mut().zip(decoders) {
            if d.decide(&y, &h)? != msg {
                *e += 1;
            }
        }
    }
    Ok(errors)
}

fn prepare<'a>(cb: &'a Codebook, decoders: &[&'a DecoderSpec], sigma2: f64) -> Result<Vec<PreparedDecoder<'a>>> {
    decoders.iter().map(|d| d.prepare(cb, sigma2)).collect()
}

/// BLER of one decoder with `n` receive antennas from `trials` sequential
/// draws of `rng`.
pub fn estimate_bler(
    cb: &Codebook,
    dec: &DecoderSpec,
    n: usize,
    snr_db: f64,
    trials: u64,
    rng: &mut RngStream,
) -> Result<BlerPoint> {
    Ok(estimate_paired(cb, &[dec], n, snr_db, trials, rng)?.remove(0))
}

/// Paired BLER of several decoders with `n` receive antennas: every decoder
/// sees the same messages, channels and noise.
pub fn estimate_paired(
    cb: &Codebook,
    decoders: &[&DecoderSpec],
    n: usize,
    snr_db: f64,
    trials: u64,
    rng: &mut RngStream,
) -> Result<Vec<BlerPoint>> {
    if trials == 0 {
        return Err(Error::arg("trials must be >= 1"));
    }
    let cfg = ChannelConfig::from_snr_db(cb.m(), n, cb.l(), snr_db)?;
    let prepared = prepare(cb, decoders, cfg.sigma2)?;
    let errors = count_errors(cb, &prepared, &cfg, trials, rng)?;
    errors.into_iter().map(|e| BlerPoint::new(snr_db, e, trials)).collect()
}

/// Chunk sizes covering `trials`.
pub fn chunk_sizes(trials: u64, chunk: u64) -> Vec<u64> {
    let chunk = chunk.max(1);
    let mut out = vec![chunk; (trials / chunk) as usize];
    if trials % chunk != 0 {
        out.push(trials % chunk);
    }
    out
}

/// Everything needed to evaluate decoders at one SNR, chunk by chunk.
#[derive(Clone, Debug)]
pub struct PointJob<'a> {
    pub cb: &'a Codebook,
    pub decoders: Vec<&'a DecoderSpec>,
    pub n: usize,
    pub snr_db: f64,
    pub base: RngStream,
}

impl PointJob<'_> {
    /// Error counts of chunk `index` with `trials` transmissions.
    pub fn run_chunk(&self, index: u64, trials: u64) -> Result<Vec<u64>> {
        let cfg = ChannelConfig::from_snr_db(self.cb.m(), self.n, self.cb.l(), self.snr_db)?;
        let prepared = prepare(self.cb, &self.decoders, cfg.sigma2)?;
        count_errors(self.cb, &prepared, &cfg, trials, &mut self.base.substream(index))
    }

    /// Sum per-chunk error counts into points.
    pub fn finish(&self, counts: &[Vec<u64>], trials: u64) -> Result<Vec<BlerPoint>> {
        let mut total = vec![0u64; self.decoders.len()];
        for c in counts {
            for (t, e) in total.iter_mut().zip(c) {
                *t += e;
            }
        }
        total.into_iter().map(|e| BlerPoint::new(self.snr_db, e, trials)).collect()
    }

    /// All chunks in order on the current thread.
    pub fn run(&self, trials: u64, chunk: u64) -> Result<Vec<BlerPoint>> {
        if trials == 0 {
            return Err(Error::arg("trials must be >= 1"));
        }
        let counts = chunk_sizes(trials, chunk)
            .into_iter()
            .enumerate()
            .map(|(i, t)| self.run_chunk(i as u64, t))
            .collect::<Result<Vec<_>>>()?;
        self.finish(&counts, trials)
    }

    /// Keep adding chunks until the first decoder has `min_errors` errors or
    /// `cap` trials have been spent.
    pub fn run_adaptive(&self, min_errors: u64, chunk: u64, cap: u64) -> Result<Vec<BlerPoint>> {
        if cap == 0 {
            return Err(Error::arg("trial cap must be >= 1"));
        }
        let chunk = chunk.max(1);
        let mut counts = Vec::new();
        let mut trials = 0;
        while trials < cap {
            let t = chunk.min(cap - trials);
            let c = self.run_chunk(counts.len() as u64, t)?;
            trials += t;
            counts.push(c);
            let first: u64 = counts.iter().map(|c| c[0]).sum();
            if first >= min_errors {
                break;
            }
        }
        self.finish(&counts, trials)
    }
}

/// Jobs for an SNR grid: point `i` uses `rng.substream(i)`.
pub fn point_jobs<'a>(
    cb: &'a Codebook,
    decoders: &[&'a DecoderSpec],
    n: usize,
    snrs_db: &[f64],
    rng: &RngStream,
) -> Vec<PointJob<'a>> {
    snrs_db
        .iter()
        .enumerate()
        .map(|(i, &snr_db)| PointJob { cb, decoders: decoders.to_vec(), n, snr_db, base: rng.substream(i as u64) })
        .collect()
}

/// Paired curves for several decoders over `start..=stop`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_snr_paired(
    cb: &Codebook,
    decoders: &[&DecoderSpec],
    n: usize,
    start: f64,
    stop: f64,
    step: f64,
    trials: u64,
    rng: &RngStream,
) -> Result<Vec<BlerCurve>> {
    let snrs = snr_grid(start, stop, step)?;
    let mut curves: Vec<BlerCurve> =
        decoders.iter().map(|d| BlerCurve { decoder: d.name().into(), points: Vec::new() }).collect();
    for job in point_jobs(cb, decoders, n, &snrs, rng) {
        for (curve, p) in curves.iter_mut().zip(job.run(trials, DEFAULT_CHUNK)?) {
            curve.points.push(p);
        }
    }
    Ok(curves)
}

/// One decoder's curve over `start..=stop`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_snr(
    cb: &Codebook,
    dec: &DecoderSpec,
    n: usize,
    start: f64,
    stop: f64,
    step: f64,
    trials: u64,
    rng: &RngStream,
) -> Result<BlerCurve> {
    Ok(sweep_snr_paired(cb, &[dec], n, start, stop, step, trials, rng)?.remove(0))
}
