//! Training objectives recorded on the tape.

use alloc::vec::Vec;

use crate::autodiff::complex::CVar;
use crate::autodiff::{Tape, Var};
use crate::channel::{sample_batch as sample_channel, ChannelBatch, ChannelConfig};
use crate::error::{Error, Result};
use crate::modem::{graph, OperatingPoint};
use crate::networks::{NetForward, NetMode, Network};
use crate::rng::RngStream;

/// Uniform messages plus the channel draws they see.
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    pub messages: Vec<usize>,
    pub channel: ChannelBatch,
}

/// Draw `size` messages, then one `(H, Z)` pair per message.
pub fn sample_batch(op: &OperatingPoint, sigma2: f64, size: usize, rng: &mut RngStream) -> Result<TrainingBatch> {
    let cfg = ChannelConfig::new(op.m, op.n, op.l, sigma2)?;
    let messages = (0..size).map(|_| rng.below(op.messages() as u64) as usize).collect();
    let channel = sample_channel(&cfg, size, rng);
    Ok(TrainingBatch { messages, channel })
}

/// Nodes of one objective evaluation.
#[derive(Clone, Debug)]
pub struct ObjectiveNodes {
    pub objective: Var,
    pub cross_entropy: Var,
    /// Orthonormal loss, recorded for pML only.
    pub ortho: Option<Var>,
    pub theta: Option<Var>,
    /// Normalized codebook.
    pub codebook: CVar,
    pub net: Option<NetForward>,
}

fn encode_and_transmit(tape: &mut Tape, raw: CVar, op: &OperatingPoint, batch: &TrainingBatch) -> Result<(CVar, CVar)> {
    let cb = graph::normalize(tape, raw)?;
    let x = graph::encode(tape, cb, &batch.messages)?;
    let y = graph::transmit(tape, x, op, &batch.channel)?;
    Ok((cb, y))
}

/// `CE * (1 + lambda * l(C))` with the pML posterior, `theta = exp(phi)`.
/// `lambda = 0` gives plain cross-entropy.
pub fn pml_objective(
    tape: &mut Tape,
    raw: CVar,
    phi: Var,
    lambda: f64,
    op: &OperatingPoint,
    batch: &TrainingBatch,
) -> Result<ObjectiveNodes> {
    if !(lambda >= 0.0) {
        return Err(Error::arg("lambda must be non-negative"));
    }
    let (cb, y) = encode_and_transmit(tape, raw, op, batch)?;
    let (logits, theta) = graph::pml_logits(tape, y, cb, phi, op)?;
    let ce = tape.softmax_cross_entropy(logits, &batch.messages)?;
    let ortho = graph::orthonormal_loss(tape, cb, op)?;
    let weighted = tape.scale(ortho, lambda);
    let factor = tape.add_scalar(weighted, 1.0);
    let objective = tape.mul(ce, factor)?;
    Ok(ObjectiveNodes { objective, cross_entropy: ce, ortho: Some(ortho), theta: Some(theta), codebook: cb, net: None })
}

/// Mean cross-entropy of the neural decoder. `params` are the network's
/// parameter nodes in `Network::tensors` order.
pub fn nn_objective(
    tape: &mut Tape,
    raw: CVar,
    net: &Network,
    params: &[Var],
    mode: NetMode,
    op: &OperatingPoint,
    batch: &TrainingBatch,
) -> Result<ObjectiveNodes> {
    let (cb, y) = encode_and_transmit(tape, raw, op, batch)?;
    let input = graph::flatten(tape, y)?;
    let fwd = net.forward_with(tape, input, params, mode)?;
    let ce = tape.softmax_cross_entropy(fwd.logits, &batch.messages)?;
    Ok(ObjectiveNodes { objective: ce, cross_entropy: ce, ortho: None, theta: None, codebook: cb, net: Some(fwd) })
}
