//! JSON model artifacts.
//!
//! Every floating-point value is stored as a decimal string in Rust's
//! shortest round-trip form, so save -> load reproduces the exact bits. The
//! schema is described in `docs/artifact-format.md`.

use std::fs;
use std::path::Path;

use ncmimo_core::autodiff::Tensor;
use ncmimo_core::modem::{Codebook, DecoderSpec, OperatingPoint};
use ncmimo_core::networks::{AffineLayer, Family, NetArch, NetWeights, Network, NormLayer};
use ncmimo_core::training::{DecoderConfig, TrainingRun};
use ncmimo_core::ComplexMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

/// Reshape and bit-order conventions written into every artifact.
pub const LAYOUT: &str = "antenna-major";
pub const BIT_ORDER: &str = "msb-first";

/// How the model was trained.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta {
    pub train_snr_db: f64,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub batch: usize,
    pub learning_rate: f64,
    /// Iteration of the saved snapshot.
    pub iteration: usize,
    pub iterations_run: usize,
    pub best_val_bler: f64,
    pub stop_reason: String,
}

/// A trained system: codebook plus a pML or neural decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelArtifact {
    pub op: OperatingPoint,
    pub codebook: Codebook,
    pub decoder: DecoderSpec,
    pub meta: TrainingMeta,
}

impl ModelArtifact {
    /// The best snapshot of a run, if it has one.
    pub fn from_run(run: &TrainingRun) -> Option<Self> {
        let best = run.best.as_ref()?;
        let cfg = &run.config;
        Some(Self {
            op: cfg.op,
            codebook: best.codebook.clone(),
            decoder: best.decoder.clone(),
            meta: TrainingMeta {
                train_snr_db: cfg.snr_db,
                lambda: match cfg.decoder {
                    DecoderConfig::Pml { lambda } => Some(lambda),
                    DecoderConfig::Nn { .. } => None,
                },
                seed: cfg.seed,
                batch: cfg.batch,
                learning_rate: cfg.learning_rate,
                iteration: best.iteration,
                iterations_run: run.log.len(),
                best_val_bler: best.val_bler,
                stop_reason: run.stop.name().into(),
            },
        })
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let file = ArtifactFile::from_model(self)?;
        let mut s = serde_json::to_string_pretty(&file).map_err(|e| CliError::Format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Format(format!("artifact is not valid JSON: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            None => return Err(CliError::Format("artifact has no format_version".into())),
            Some(v) if v > FORMAT_VERSION as u64 => {
                return Err(CliError::Format(format!(
                    "artifact format version {v} is newer than supported version {FORMAT_VERSION}"
                )))
            }
            Some(v) if v < 1 => return Err(CliError::Format(format!("invalid artifact format version {v}"))),
            Some(_) => {}
        }
        let file: ArtifactFile =
            serde_json::from_value(value).map_err(|e| CliError::Format(format!("malformed artifact: {e}")))?;
        file.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_json()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// `f64` as a shortest round-trip decimal string.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Dec(f64);

impl Serialize for Dec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:?}", self.0))
    }
}

impl<'de> Deserialize<'de> for Dec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse::<f64>().map(Dec).map_err(|_| serde::de::Error::custom(format!("not a decimal number: {s:?}")))
    }
}

fn decs(v: &[f64]) -> Vec<Dec> {
    v.iter().map(|&x| Dec(x)).collect()
}

fn floats(v: Vec<Dec>) -> Vec<f64> {
    v.into_iter().map(|d| d.0).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArtifactFile {
    format_version: u32,
    operating_point: OpFile,
    codebook: CodebookFile,
    decoder: DecoderFile,
    training: MetaFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpFile {
    k: u32,
    #[serde(rename = "L")]
    l: usize,
    m: usize,
    n: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookFile {
    rows: usize,
    cols: usize,
    layout: String,
    bit_order: String,
    re: Vec<Dec>,
    im: Vec<Dec>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum DecoderFile {
    Pml { theta: Dec },
    Mlp(NetFile),
    Resmlp(NetFile),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetFile {
    depth: usize,
    hidden: usize,
    input_width: usize,
    output_width: usize,
    affine: Vec<AffineFile>,
    norm: Vec<NormFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineFile {
    out_features: usize,
    in_features: usize,
    /// Row-major `out x in`.
    weight: Vec<Dec>,
    bias: Vec<Dec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormFile {
    gamma: Vec<Dec>,
    beta: Vec<Dec>,
    running_mean: Vec<Dec>,
    running_var: Vec<Dec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    train_snr_db: Dec,
    lambda: Option<Dec>,
    seed: u64,
    batch: usize,
    learning_rate: Dec,
    iteration: usize,
    iterations_run: usize,
    best_val_bler: Dec,
    stop_reason: String,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Format(msg.into())
}

impl ArtifactFile {
    fn from_model(a: &ModelArtifact) -> Result<Self, CliError> {
        let c = a.codebook.to_matrix();
        let decoder = match &a.decoder {
            DecoderSpec::Pml { theta } => DecoderFile::Pml { theta: Dec(*theta) },
            DecoderSpec::Nn(net) => {
                let f = NetFile {
                    depth: net.arch.depth,
                    hidden: net.arch.hidden,
                    input_width: net.arch.input_width,
                    output_width: net.arch.output_width,
                    affine: net
                        .weights
                        .affine
                        .iter()
                        .map(|l| AffineFile {
                            out_features: l.w.rows(),
                            in_features: l.w.cols(),
                            weight: decs(l.w.data()),
                            bias: decs(l.b.data()),
                        })
                        .collect(),
                    norm: net
                        .weights
                        .norm
                        .iter()
                        .map(|n| NormFile {
                            gamma: decs(n.gamma.data()),
                            beta: decs(n.beta.data()),
                            running_mean: decs(&n.running_mean),
                            running_var: decs(&n.running_var),
                        })
                        .collect(),
                };
                match net.arch.family {
                    Family::Mlp => DecoderFile::Mlp(f),
                    Family::ResMlp => DecoderFile::Resmlp(f),
                }
            }
            other => {
                return Err(bad(format!("{} decoders are evaluation baselines and cannot be saved", other.name())))
            }
        };
        let m = &a.meta;
        Ok(Self {
            format_version: FORMAT_VERSION,
            operating_point: OpFile { k: a.op.k, l: a.op.l, m: a.op.m, n: a.op.n },
            codebook: CodebookFile {
                rows: c.rows(),
                cols: c.cols(),
                layout: LAYOUT.into(),
                bit_order: BIT_ORDER.into(),
                re: decs(c.re()),
                im: decs(c.im()),
            },
            decoder,
            training: MetaFile {
                train_snr_db: Dec(m.train_snr_db),
                lambda: m.lambda.map(Dec),
                seed: m.seed,
                batch: m.batch,
                learning_rate: Dec(m.learning_rate),
                iteration: m.iteration,
                iterations_run: m.iterations_run,
                best_val_bler: Dec(m.best_val_bler),
                stop_reason: m.stop_reason.clone(),
            },
        })
    }

    fn into_model(self) -> Result<ModelArtifact, CliError> {
        let o = self.operating_point;
        let op = OperatingPoint::new(o.k, o.l, o.m, o.n)?;
        let cb = self.codebook;
        if cb.layout != LAYOUT || cb.bit_order != BIT_ORDER {
            return Err(bad(format!(
                "unsupported codebook convention {}/{}; expected {LAYOUT}/{BIT_ORDER}",
                cb.layout, cb.bit_order
            )));
        }
        if (cb.rows, cb.cols) != (op.messages(), op.row_len()) {
            return Err(bad(format!(
                "codebook is {}x{} but the operating point needs {}x{}",
                cb.rows,
                cb.cols,
                op.messages(),
                op.row_len()
            )));
        }
        let matrix = ComplexMatrix::from_parts(cb.rows, cb.cols, floats(cb.re), floats(cb.im))?;
        let codebook = Codebook::from_matrix(op.k, op.m, op.l, &matrix)?;
        let decoder = match self.decoder {
            DecoderFile::Pml { theta } => DecoderSpec::Pml { theta: theta.0 },
            DecoderFile::Mlp(f) => DecoderSpec::Nn(net_from_file(Family::Mlp, f)?),
            DecoderFile::Resmlp(f) => DecoderSpec::Nn(net_from_file(Family::ResMlp, f)?),
        };
        decoder.validate(&op)?;
        let m = self.training;
        Ok(ModelArtifact {
            op,
            codebook,
            decoder,
            meta: TrainingMeta {
                train_snr_db: m.train_snr_db.0,
                lambda: m.lambda.map(|d| d.0),
                seed: m.seed,
                batch: m.batch,
                learning_rate: m.learning_rate.0,
                iteration: m.iteration,
                iterations_run: m.iterations_run,
                best_val_bler: m.best_val_bler.0,
                stop_reason: m.stop_reason,
            },
        })
    }
}

fn net_from_file(family: Family, f: NetFile) -> Result<Network, CliError> {
    let arch =
        NetArch { family, depth: f.depth, hidden: f.hidden, input_width: f.input_width, output_width: f.output_width };
    let affine = f
        .affine
        .into_iter()
        .map(|a| {
            let out = a.out_features;
            Ok(AffineLayer {
                w: Tensor::new(out, a.in_features, floats(a.weight))?,
                b: Tensor::new(1, out, floats(a.bias))?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let norm = f
        .norm
        .into_iter()
        .map(|n| {
            let width = n.gamma.len();
            Ok(NormLayer {
                gamma: Tensor::new(1, width, floats(n.gamma))?,
                beta: Tensor::new(1, n.beta.len(), floats(n.beta))?,
                running_mean: floats(n.running_mean),
                running_var: floats(n.running_var),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let net = Network { arch, weights: NetWeights { affine, norm } };
    net.validate()?;
    Ok(net)
}
