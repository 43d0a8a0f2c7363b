//! The training loop: Adam on the composite objective, periodic validation,
//! best-BLER snapshots and early stopping on the running-average objective.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Tensor, Var};
use crate::channel::sigma2_from_snr_db;
use crate::error::{Error, Result};
use crate::eval::estimate_bler;
use crate::modem::{graph, orthonormal_loss, Codebook, DecoderSpec, OperatingPoint};
use crate::networks::{Family, NetArch, NetMode, Network, BN_MOMENTUM};
use crate::rng::RngStream;
use crate::tensor::{sample_cn, ComplexMatrix};
use crate::training::adam::AdamState;
use crate::training::objective::{nn_objective, pml_objective, sample_batch};

/// Stream ids under the run seed.
const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;

/// Decoder to train jointly with the codebook.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecoderConfig {
    Pml { lambda: f64 },
    Nn { family: Family, depth: usize, hidden: usize },
}

impl DecoderConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DecoderConfig::Pml { .. } => "pml",
            DecoderConfig::Nn { family, .. } => family.name(),
        }
    }
}

/// Batch size and iteration budget presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// batch 1000, 2000 iterations
    Desk,
    /// batch 10000, 50000 iterations
    Paper,
}

impl Profile {
    pub fn batch(self) -> usize {
        match self {
            Profile::Desk => 1000,
            Profile::Paper => 10_000,
        }
    }

    pub fn max_iterations(self) -> usize {
        match self {
            Profile::Desk => 2000,
            Profile::Paper => 50_000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Profile::Desk),
            "paper" => Some(Profile::Paper),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub op: OperatingPoint,
    pub decoder: DecoderConfig,
    pub snr_db: f64,
    pub batch: usize,
    pub max_iterations: usize,
    pub eval_interval: usize,
    /// Evaluations without improvement of the running-average objective
    /// before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    /// Fresh messages per validation BLER estimate.
    pub validation_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults: eval every 250 iterations, patience 10, lr 1e-3,
    /// 10^4 validation messages.
    pub fn new(op: OperatingPoint, decoder: DecoderConfig, snr_db: f64, profile: Profile, seed: u64) -> Self {
        Self {
            op,
            decoder,
            snr_db,
            batch: profile.batch(),
            max_iterations: profile.max_iterations(),
            eval_interval: 250,
            patience: 10,
            learning_rate: 1e-3,
            validation_size: 10_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        OperatingPoint::new(self.op.k, self.op.l, self.op.m, self.op.n)?;
        if self.batch == 0 || self.max_iterations == 0 || self.eval_interval == 0 || self.validation_size == 0 {
            return Err(Error::arg("batch, max_iterations, eval_interval and validation_size must be >= 1"));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::arg("snr_db must be finite"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::arg("learning_rate must be positive"));
        }
        match self.decoder {
            DecoderConfig::Pml { lambda } if !(lambda > 0.0) || !lambda.is_finite() => {
                Err(Error::arg("lambda must be > 0 for the pML decoder"))
            }
            DecoderConfig::Nn { family, depth, hidden } => self.arch(family, depth, hidden).validate(),
            _ => Ok(()),
        }
    }

    fn arch(&self, family: Family, depth: usize, hidden: usize) -> NetArch {
        NetArch { family, depth, hidden, input_width: self.op.input_width(), output_width: self.op.messages() }
    }
}

/// One logged optimizer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub objective: f64,
    pub cross_entropy: f64,
    pub ortho_loss: f64,
    /// pML only.
    pub theta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub iteration: usize,
    pub errors: u64,
    pub trials: u64,
    pub val_bler: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub codebook: Codebook,
    pub decoder: DecoderSpec,
    pub val_bler: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    EarlyStopped,
    Diverged { iteration: usize },
}

impl StopReason {
    pub fn name(&self) -> &'static str {
        match self {
            StopReason::MaxIterations => "max_iterations",
            StopReason::EarlyStopped => "early_stopped",
            StopReason::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRun {
    pub config: TrainConfig,
    pub log: Vec<LogRow>,
    pub evals: Vec<EvalRow>,
    /// `None` only if the run diverged before its first evaluation.
    pub best: Option<Snapshot>,
    pub stop: StopReason,
}

impl TrainingRun {
    pub fn final_objective(&self) -> Option<f64> {
        self.log.last().map(|r| r.objective)
    }
}

/// Stepwise training state. [`train`] drives it to completion; tests can
/// step it manually to inspect the codebook between updates.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    sigma2: f64,
    raw_re: Tensor,
    raw_im: Tensor,
    phi: f64,
    net: Option<Network>,
    adam: AdamState,
    train_rng: RngStream,
    val_rng: RngStream,
    iteration: usize,
    log: Vec<LogRow>,
    evals: Vec<EvalRow>,
    best: Option<Snapshot>,
    window: (f64, usize),
    best_average: f64,
    stale: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let op = cfg.op;
        let mut init = RngStream::new(cfg.seed, INIT_STREAM);
        let c = sample_cn(op.messages(), op.row_len(), 1.0, &mut init)?;
        let (re, im) = c.into_parts();
        let raw_re = Tensor::new(op.messages(), op.row_len(), re)?;
        let raw_im = Tensor::new(op.messages(), op.row_len(), im)?;
        let net = match cfg.decoder {
            DecoderConfig::Pml { .. } => None,
            DecoderConfig::Nn { family, depth, hidden } => {
                Some(Network::new(cfg.arch(family, depth, hidden), &mut init)?)
            }
        };
        let mut sizes = vec![raw_re.len(), raw_im.len()];
        match &net {
            None => sizes.push(1),
            Some(n) => sizes.extend(n.tensors().iter().map(|t| t.len())),
        }
        Ok(Self {
            sigma2: sigma2_from_snr_db(cfg.snr_db),
            adam: AdamState::new(&sizes, cfg.learning_rate),
            train_rng: RngStream::new(cfg.seed, TRAIN_STREAM),
            val_rng: RngStream::new(cfg.seed, VALIDATION_STREAM),
            cfg,
            raw_re,
            raw_im,
            phi: 0.0,
            net,
            iteration: 0,
            log: Vec::new(),
            evals: Vec::new(),
            best: None,
            window: (0.0, 0),
            best_average: f64::INFINITY,
            stale: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn evals(&self) -> &[EvalRow] {
        &self.evals
    }

    pub fn best(&self) -> Option<&Snapshot> {
        self.best.as_ref()
    }

    /// The raw (unnormalized) codebook parameter.
    pub fn raw_codebook(&self) -> ComplexMatrix {
        ComplexMatrix::from_parts(
            self.raw_re.rows(),
            self.raw_re.cols(),
            self.raw_re.data().to_vec(),
            self.raw_im.data().to_vec(),
        )
        .expect("consistent raw codebook")
    }

    /// The current normalized codebook.
    pub fn codebook(&self) -> Result<Codebook> {
        let op = self.cfg.op;
        let raw = crate::modem::RawCodebook::new(op.k, op.m, op.l, self.raw_codebook())?;
        crate::modem::normalize_codebook(&raw)
    }

    /// The current decoder (networks in eval mode).
    pub fn decoder(&self) -> DecoderSpec {
        match &self.net {
            None => DecoderSpec::Pml { theta: libm::exp(self.phi) },
            Some(n) => DecoderSpec::Nn(n.clone()),
        }
    }

    /// Override the pML confidence (warm starts). Errors for neural decoders
    /// and for `theta <= 0`, which `exp(phi)` cannot represent.
    pub fn set_theta(&mut self, theta: f64) -> Result<()> {
        if self.net.is_some() {
            return Err(Error::arg("theta only applies to the pML decoder"));
        }
        if !(theta > 0.0) {
            return Err(Error::arg("theta must be > 0"));
        }
        self.phi = libm::log(theta);
        Ok(())
    }

    /// One optimizer iteration. A non-finite objective yields
    /// [`Error::Diverged`] and leaves the parameters untouched.
    pub fn step(&mut self) -> Result<LogRow> {
        let op = self.cfg.op;
        let iteration = self.iteration + 1;
        let batch = sample_batch(&op, self.sigma2, self.cfg.batch, &mut self.train_rng)?;
        let mut tape = Tape::new();
        let raw = graph::raw_codebook_params(&mut tape, &self.raw_re, &self.raw_im);
        let mut vars: Vec<Var> = vec![raw.re, raw.im];
        let nodes = match &self.net {
            None => {
                let lambda = match self.cfg.decoder {
                    DecoderConfig::Pml { lambda } => lambda,
                    DecoderConfig::Nn { .. } => unreachable!("pML trainer without lambda"),
                };
                let phi = tape.param(Tensor::scalar(self.phi));
                vars.push(phi);
                pml_objective(&mut tape, raw, phi, lambda, &op, &batch)?
            }
            Some(net) => {
                let pv: Vec<Var> = net.tensors().into_iter().map(|t| tape.param(t.clone())).collect();
                vars.extend_from_slice(&pv);
                nn_objective(&mut tape, raw, net, &pv, NetMode::Train, &op, &batch)?
            }
        };
        let objective = tape.value(nodes.objective).item();
        if !objective.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        let ortho_loss = match nodes.ortho {
            Some(v) => tape.value(v).item(),
            None => {
                let cb = tape.value(nodes.codebook.re).clone();
                let ci = tape.value(nodes.codebook.im).clone();
                let m = ComplexMatrix::from_parts(cb.rows(), cb.cols(), cb.into_data(), ci.into_data())?;
                orthonormal_loss(&Codebook::from_matrix(op.k, op.m, op.l, &m)?)
            }
        };
        let row = LogRow {
            iteration,
            objective,
            cross_entropy: tape.value(nodes.cross_entropy).item(),
            ortho_loss,
            theta: nodes.theta.map(|t| tape.value(t).item()),
        };
        tape.backward(nodes.objective)?;
        if let (Some(net), Some(fwd)) = (self.net.as_mut(), nodes.net.as_ref()) {
            net.update_running_stats(&tape, fwd, BN_MOMENTUM);
        }
        let grads: Vec<&[f64]> = vars.iter().map(|&v| tape.grad(v).expect("parameter gradient")).collect();
        let mut params: Vec<&mut [f64]> = vec![self.raw_re.data_mut(), self.raw_im.data_mut()];
        match self.net.as_mut() {
            None => params.push(core::slice::from_mut(&mut self.phi)),
            Some(net) => params.extend(net.tensors_mut().into_iter().map(|t| t.data_mut())),
        }
        self.adam.step(&mut params, &grads)?;
        self.iteration = iteration;
        self.window.0 += objective;
        self.window.1 += 1;
        self.log.push(row);
        Ok(row)
    }

    /// Validation BLER of the current state at the training SNR; snapshots
    /// on strict improvement.
    pub fn evaluate(&mut self) -> Result<EvalRow> {
        let cb = self.codebook()?;
        let dec = self.decoder();
        let point = estimate_bler(
            &cb,
            &dec,
            self.cfg.op.n,
            self.cfg.snr_db,
            self.cfg.validation_size as u64,
            &mut self.val_rng,
        )?;
        let row =
            EvalRow { iteration: self.iteration, errors: point.errors, trials: point.trials, val_bler: point.bler };
        if self.best.as_ref().is_none_or(|b| row.val_bler < b.val_bler) {
            self.best =
                Some(Snapshot { iteration: self.iteration, codebook: cb, decoder: dec, val_bler: row.val_bler });
        }
        self.evals.push(row);
        Ok(row)
    }

    /// Fold the objective window into the early-stopping state; true when
    /// patience is exhausted.
    fn patience_exhausted(&mut self) -> bool {
        let (sum, n) = core::mem::replace(&mut self.window, (0.0, 0));
        if n == 0 {
            return false;
        }
        let average = sum / n as f64;
        if average < self.best_average {
            self.best_average = average;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.cfg.patience > 0 && self.stale >= self.cfg.patience
    }

    /// Train to completion.
    pub fn run(mut self) -> Result<TrainingRun> {
        let stop = loop {
            match self.step() {
                Ok(_) => {}
                Err(Error::Diverged { iteration }) => break StopReason::Diverged { iteration },
                Err(e) => return Err(e),
            }
            let last = self.iteration >= self.cfg.max_iterations;
            if self.iteration % self.cfg.eval_interval == 0 || last {
                self.evaluate()?;
                if self.patience_exhausted() && !last {
                    break StopReason::EarlyStopped;
                }
            }
            if last {
                break StopReason::MaxIterations;
            }
        };
        Ok(TrainingRun { config: self.cfg, log: self.log, evals: self.evals, best: self.best, stop })
    }
}

/// Train one configuration. Divergence is reported through
/// [`TrainingRun::stop`], not as an error.
pub fn train(cfg: &TrainConfig) -> Result<TrainingRun> {
    Trainer::new(cfg.clone())?.run()
}
