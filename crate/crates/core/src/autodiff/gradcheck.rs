//! Finite-difference gradient checking.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Absolute gradient norm below which errors are measured absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Compare reverse-mode gradients with central differences.
///
/// `build` must record the loss on a fresh tape given one parameter node per
/// entry of `params`, deterministically. Every coordinate is perturbed by
/// `fd_step` and the whole graph re-run, so ops that couple batch elements
/// (batchnorm) are checked correctly.
///
/// Returns the largest, over parameter tensors, of
/// `||analytic - numeric|| / max(||analytic||, ||numeric||, GRAD_FLOOR)`.
/// The floor keeps tensors whose gradient is identically zero (a bias in
/// front of a batchnorm) from turning rounding noise into a relative error
/// of one.
pub fn grad_check<F>(build: F, params: &[Tensor], fd_step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check(build, params, fd_step, None)
}

/// Like [`grad_check`] but perturbs at most `max_coords` coordinates per
/// parameter tensor, picked with a seeded stream. Intended for wide layers
/// where a full sweep would need hundreds of thousands of forward passes.
pub fn grad_check_sampled<F>(build: F, params: &[Tensor], fd_step: f64, max_coords: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check(build, params, fd_step, Some((max_coords, seed)))
}

fn eval_loss<F>(build: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if tape.shape(loss) != (1, 1) {
        return Err(Error::arg("grad_check loss must be scalar"));
    }
    Ok(tape.value(loss).item())
}

fn check<F>(build: F, params: &[Tensor], h: f64, sample: Option<(usize, u64)>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap_or(&[]).to_vec()).collect();
    drop(tape);

    let mut rng = sample.map(|(_, seed)| RngStream::new(seed, 0));
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        let n = params[p].len();
        let coords: Vec<usize> = match (sample, rng.as_mut()) {
            (Some((max, _)), Some(r)) if max < n => (0..max).map(|_| r.below(n as u64) as usize).collect(),
            _ => (0..n).collect(),
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &c in &coords {
            let orig = work[p].data()[c];
            work[p].data_mut()[c] = orig + h;
            let up = eval_loss(&build, &work)?;
            work[p].data_mut()[c] = orig - h;
            let down = eval_loss(&build, &work)?;
            work[p].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad[c];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = libm::sqrt(a2).max(libm::sqrt(n2)).max(GRAD_FLOOR);
        worst = worst.max(libm::sqrt(diff2) / denom);
    }
    Ok(worst)
}
