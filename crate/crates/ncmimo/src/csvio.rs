//! CSV schemas. Floats are written in shortest round-trip form.

use std::io::{Read, Write};

use ncmimo_core::eval::BlerCurve;
use ncmimo_core::modem::Codebook;
use ncmimo_core::training::{EvalRow, LogRow};
use ncmimo_core::ComplexMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Serialize)]
struct TrainLogRecord {
    iteration: usize,
    objective: f64,
    cross_entropy: f64,
    ortho_loss: f64,
    /// Empty for neural decoders.
    theta: Option<f64>,
}

#[derive(Serialize)]
struct EvalLogRecord {
    iteration: usize,
    val_bler: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct CurveRecord {
    pub system: String,
    pub snr_db: f64,
    pub trials: u64,
    pub errors: u64,
    pub bler: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub message: usize,
    pub antenna: usize,
    pub slot: usize,
    pub re: f64,
    pub im: f64,
}

/// `iteration, objective, cross_entropy, ortho_loss, theta`.
pub fn write_train_log<W: Write>(out: W, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(TrainLogRecord {
            iteration: r.iteration,
            objective: r.objective,
            cross_entropy: r.cross_entropy,
            ortho_loss: r.ortho_loss,
            theta: r.theta,
        })?;
    }
    if rows.is_empty() {
        w.write_record(["iteration", "objective", "cross_entropy", "ortho_loss", "theta"])?;
    }
    flush(w)
}

/// `iteration, val_bler`.
pub fn write_eval_log<W: Write>(out: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(EvalLogRecord { iteration: r.iteration, val_bler: r.val_bler })?;
    }
    if rows.is_empty() {
        w.write_record(["iteration", "val_bler"])?;
    }
    flush(w)
}

/// One row per (system, SNR): `system, snr_db, trials, errors, bler, ci_lo, ci_hi`.
pub fn write_curves<W: Write>(out: W, curves: &[BlerCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in curves {
        for p in &c.points {
            w.serialize(CurveRecord {
                system: c.decoder.clone(),
                snr_db: p.snr_db,
                trials: p.trials,
                errors: p.errors,
                bler: p.bler,
                ci_lo: p.ci_lo,
                ci_hi: p.ci_hi,
            })?;
        }
    }
    flush(w)
}

pub fn read_curves<R: Read>(input: R) -> Result<Vec<CurveRecord>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(CliError::from)).collect()
}

/// `message, antenna, slot, re, im`, message-major.
pub fn write_constellation<W: Write>(out: W, cb: &Codebook) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (message, x) in cb.words().iter().enumerate() {
        for antenna in 0..cb.m() {
            for slot in 0..cb.l() {
                let (re, im) = x.get(antenna, slot);
                w.serialize(PointRecord { message, antenna, slot, re, im })?;
            }
        }
    }
    flush(w)
}

/// Rebuild a codebook from an exported constellation. Every
/// (message, antenna, slot) must appear exactly once.
pub fn read_constellation<R: Read>(input: R, k: u32, m: usize, l: usize) -> Result<Codebook> {
    let count = 1usize << k;
    let mut words = vec![ComplexMatrix::zeros(m, l); count];
    let mut seen = vec![false; count * m * l];
    for rec in csv::Reader::from_reader(input).deserialize() {
        let p: PointRecord = rec?;
        if p.message >= count || p.antenna >= m || p.slot >= l {
            return Err(CliError::Format(format!(
                "constellation point ({}, {}, {}) is out of range",
                p.message, p.antenna, p.slot
            )));
        }
        let idx = (p.message * m + p.antenna) * l + p.slot;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(CliError::Format(format!(
                "duplicate constellation point ({}, {}, {})",
                p.message, p.antenna, p.slot
            )));
        }
        words[p.message].set(p.antenna, p.slot, (p.re, p.im));
    }
    if seen.iter().any(|s| !s) {
        return Err(CliError::Format("constellation has missing points".into()));
    }
    Ok(Codebook::from_codewords(k, words)?)
}

fn flush<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| CliError::Format(format!("csv flush failed: {}", e.error())))?;
    Ok(())
}
