//! File formats, configuration and the command-line driver for
//! [`ncmimo_core`].
//!
//! - [`artifact`]: versioned JSON model files.
//! - [`config`]: TOML run and grid files.
//! - [`csvio`]: training logs, BLER curves and constellation exports.
//! - [`cli`]: the `ncmimo` subcommands.

pub mod artifact;
pub mod cli;
pub mod config;
pub mod csvio;
mod error;

pub use error::{CliError, Result};
pub use ncmimo_core as core;
