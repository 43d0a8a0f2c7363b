//! Learned signal constellations and soft-output decoders for the
//! non-coherent MIMO channel.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! computation driven by explicit [`RngStream`]s; file formats, the CLI and
//! thread-parallel drivers live in the `ncmimo` companion crate.
//!
//! Module map:
//!
//! - [`tensor`] / [`rng`]: split re/im complex matrices, counter-based RNG,
//!   circular Gaussian sampling.
//! - [`autodiff`]: a small reverse-mode tape over real 2-D tensors.
//! - [`channel`]: block Rayleigh fading `Y = HX + Z`.
//! - [`modem`]: lookup-table encoder and the pML / NN / exact-ML /
//!   coherent-ML decoders.
//! - [`networks`]: MLP and residual MLP decoders.
//! - [`training`]: objectives, Adam, the training loop and sweeps.
//! - [`eval`]: Monte-Carlo block error rate with Wilson intervals.

#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod channel;
mod error;
pub mod eval;
pub mod modem;
pub mod networks;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::ComplexMatrix;
