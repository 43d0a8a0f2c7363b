//! TOML run and grid configuration.
//!
//! Unknown keys are rejected everywhere. Training fields left out fall back
//! to the selected profile (`desk` unless overridden), and explicit values
//! always win over the profile.

use std::fs;
use std::path::Path;

use ncmimo_core::modem::OperatingPoint;
use ncmimo_core::networks::Family;
use ncmimo_core::rng::derive_seed;
use ncmimo_core::training::{DecoderConfig, Profile, TrainConfig};
use serde::Deserialize;

use crate::error::{CliError, Result};

/// A single training run.
///
/// ```toml
/// seed = 7
/// profile = "desk"
///
/// [operating_point]
/// k = 2
/// L = 2
/// m = 2
/// n = 2
///
/// [decoder]
/// kind = "pml"      # pml | mlp | resmlp
/// lambda = 1.0      # pml only
/// # depth = 1       # mlp/resmlp only
/// # hidden = 256
///
/// [training]
/// snr_db = 15.0
/// # batch, max_iterations, eval_interval, patience, learning_rate,
/// # validation_size override the profile
/// ```
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub seed: Option<u64>,
    pub profile: Option<String>,
    pub operating_point: OpSection,
    pub decoder: DecoderSection,
    pub training: TrainingSection,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpSection {
    pub k: u32,
    #[serde(rename = "L")]
    pub l: usize,
    pub m: usize,
    pub n: usize,
}

impl OpSection {
    fn resolve(&self) -> Result<OperatingPoint> {
        OperatingPoint::new(self.k, self.l, self.m, self.n)
            .map_err(|e| CliError::usage(format!("operating_point: {e}")))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    pub kind: String,
    pub lambda: Option<f64>,
    pub depth: Option<usize>,
    pub hidden: Option<usize>,
}

impl DecoderSection {
    fn resolve(&self) -> Result<DecoderConfig> {
        match self.kind.as_str() {
            "pml" => {
                if self.depth.is_some() || self.hidden.is_some() {
                    return Err(CliError::usage("decoder.depth and decoder.hidden apply to mlp/resmlp only"));
                }
                let lambda = self
                    .lambda
                    .ok_or_else(|| CliError::usage("missing key `decoder.lambda` (required for kind = \"pml\")"))?;
                Ok(DecoderConfig::Pml { lambda })
            }
            kind => {
                let family = Family::parse(kind)
                    .ok_or_else(|| CliError::usage(format!("decoder.kind must be pml, mlp or resmlp, got {kind:?}")))?;
                if self.lambda.is_some() {
                    return Err(CliError::usage("decoder.lambda applies to pml only"));
                }
                let depth = self.depth.ok_or_else(|| {
                    CliError::usage(format!("missing key `decoder.depth` (required for kind = {kind:?})"))
                })?;
                let hidden = self.hidden.ok_or_else(|| {
                    CliError::usage(format!("missing key `decoder.hidden` (required for kind = {kind:?})"))
                })?;
                Ok(DecoderConfig::Nn { family, depth, hidden })
            }
        }
    }
}

/// Optional overrides shared by run and grid files.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub batch: Option<usize>,
    pub max_iterations: Option<usize>,
    pub eval_interval: Option<usize>,
    pub patience: Option<usize>,
    pub learning_rate: Option<f64>,
    pub validation_size: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if let Some(v) = self.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.eval_interval {
            cfg.eval_interval = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.validation_size {
            cfg.validation_size = v;
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub snr_db: f64,
    pub batch: Option<usize>,
    pub max_iterations: Option<usize>,
    pub eval_interval: Option<usize>,
    pub patience: Option<usize>,
    pub learning_rate: Option<f64>,
    pub validation_size: Option<usize>,
}

impl TrainingSection {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            batch: self.batch,
            max_iterations: self.max_iterations,
            eval_interval: self.eval_interval,
            patience: self.patience,
            learning_rate: self.learning_rate,
            validation_size: self.validation_size,
        }
    }
}

pub fn parse_profile(name: &str) -> Result<Profile> {
    Profile::parse(name).ok_or_else(|| CliError::usage(format!("profile must be desk or paper, got {name:?}")))
}

fn resolve_profile(cli: Option<Profile>, file: &Option<String>) -> Result<Profile> {
    match (cli, file) {
        (Some(p), _) => Ok(p),
        (None, Some(name)) => parse_profile(name),
        (None, None) => Ok(Profile::Desk),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

impl RunConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        parse_toml(text, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?, path)
    }

    /// Seed precedence: `seed` flag, then the file, then 0.
    pub fn resolve(&self, seed: Option<u64>, profile: Option<Profile>) -> Result<TrainConfig> {
        let profile = resolve_profile(profile, &self.profile)?;
        let seed = seed.or(self.seed).unwrap_or(0);
        let op = self.operating_point.resolve()?;
        let decoder = self.decoder.resolve()?;
        let mut cfg = TrainConfig::new(op, decoder, self.training.snr_db, profile, seed);
        self.training.overrides().apply(&mut cfg);
        cfg.validate().map_err(|e| CliError::usage(format!("invalid training config: {e}")))?;
        Ok(cfg)
    }
}

/// A sweep grid: operating points x decoders x training SNRs.
///
/// Runs are enumerated with `k` outermost, then shape, then pML lambdas,
/// then neural family x depth x hidden, then SNR. Run `i` trains with seed
/// `derive_seed(seed, i)`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub seed: Option<u64>,
    pub profile: Option<String>,
    pub operating_points: OpGridSection,
    pub decoders: DecoderGridSection,
    pub training: TrainingGridSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpGridSection {
    pub k: Vec<u32>,
    pub shapes: Vec<ShapeEntry>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeEntry {
    #[serde(rename = "L")]
    pub l: usize,
    pub m: usize,
    pub n: usize,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderGridSection {
    #[serde(default)]
    pub pml_lambda: Vec<f64>,
    pub nn: Option<NnGridSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NnGridSection {
    pub families: Vec<String>,
    pub depth: Vec<usize>,
    pub hidden: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingGridSection {
    pub snr_db: Vec<f64>,
    pub batch: Option<usize>,
    pub max_iterations: Option<usize>,
    pub eval_interval: Option<usize>,
    pub patience: Option<usize>,
    pub learning_rate: Option<f64>,
    pub validation_size: Option<usize>,
}

impl TrainingGridSection {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            batch: self.batch,
            max_iterations: self.max_iterations,
            eval_interval: self.eval_interval,
            patience: self.patience,
            learning_rate: self.learning_rate,
            validation_size: self.validation_size,
        }
    }
}

impl GridFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        parse_toml(text, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?, path)
    }

    pub fn operating_points(&self) -> Result<Vec<OperatingPoint>> {
        let mut out = Vec::new();
        for &k in &self.operating_points.k {
            for s in &self.operating_points.shapes {
                out.push(OpSection { k, l: s.l, m: s.m, n: s.n }.resolve()?);
            }
        }
        Ok(out)
    }

    pub fn decoders(&self) -> Result<Vec<DecoderConfig>> {
        let mut out: Vec<DecoderConfig> =
            self.decoders.pml_lambda.iter().map(|&lambda| DecoderConfig::Pml { lambda }).collect();
        if let Some(nn) = &self.decoders.nn {
            for name in &nn.families {
                let family = Family::parse(name)
                    .ok_or_else(|| CliError::usage(format!("decoders.nn.families: unknown family {name:?}")))?;
                for &depth in &nn.depth {
                    for &hidden in &nn.hidden {
                        out.push(DecoderConfig::Nn { family, depth, hidden });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Every run configuration in enumeration order.
    pub fn expand(&self, seed: Option<u64>, profile: Option<Profile>) -> Result<Vec<TrainConfig>> {
        let profile = resolve_profile(profile, &self.profile)?;
        let master = seed.or(self.seed).unwrap_or(0);
        let ops = self.operating_points()?;
        let decoders = self.decoders()?;
        let mut out = Vec::new();
        for op in &ops {
            for dec in &decoders {
                for &snr in &self.training.snr_db {
                    let mut cfg = TrainConfig::new(*op, *dec, snr, profile, derive_seed(master, out.len() as u64));
                    self.training.overrides().apply(&mut cfg);
                    cfg.validate().map_err(|e| CliError::usage(format!("grid run {}: {e}", out.len())))?;
                    out.push(cfg);
                }
            }
        }
        if out.is_empty() {
            return Err(CliError::usage("grid expands to zero runs"));
        }
        Ok(out)
    }
}
