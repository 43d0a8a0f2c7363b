//! Command-line interface.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ncmimo_core::channel::{sample_block, ChannelConfig};
use ncmimo_core::eval::{point_jobs, snr_grid, BlerCurve, DEFAULT_CHUNK};
use ncmimo_core::modem::{hard_decision, softmax, DecoderSpec};
use ncmimo_core::training::{train, StopReason, TrainConfig, TrainingRun};
use ncmimo_core::RngStream;
use rayon::prelude::*;

use crate::artifact::ModelArtifact;
use crate::config::{parse_profile, GridFile, RunConfigFile};
use crate::csvio;
use crate::error::{CliError, Result};

pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EVAL_LOG_FILE: &str = "eval_log.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Eval stream for `eval`, posterior stream for `export`.
const EVAL_STREAM: u64 = 16;
const DEMO_STREAM: u64 = 17;

#[derive(Debug, Parser)]
#[command(name = "ncmimo", version, about = "Learned constellations and soft decoders for non-coherent MIMO")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one codebook and decoder from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for model.json, train_log.csv and eval_log.csv.
        #[arg(long)]
        out: PathBuf,
        /// desk or paper; explicit config values still win.
        #[arg(long, value_parser = parse_profile_arg)]
        profile: Option<ncmimo_core::training::Profile>,
    },
    /// Monte-Carlo BLER of a trained model over an SNR grid.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// start:stop:step in dB, stop inclusive.
        #[arg(long, default_value = "0:30:5")]
        snr: String,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Baseline::None)]
        baseline: Baseline,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep adding chunks of trials until the learned system has this
        /// many errors; --trials becomes the cap.
        #[arg(long)]
        min_errors: Option<u64>,
    },
    /// Train every configuration of a grid file.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent training runs.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, value_parser = parse_profile_arg)]
        profile: Option<ncmimo_core::training::Profile>,
        /// Master seed; overrides the grid file.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the enumerated runs as CSV and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Export the constellation or a posterior demo as CSV.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        what: Export,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Posterior demo SNR in dB; defaults to the training SNR.
        #[arg(long)]
        snr: Option<f64>,
        /// Posterior demo sample count.
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Exactml,
    Coherent,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Export {
    Constellation,
    PosteriorDemo,
}

fn parse_profile_arg(s: &str) -> std::result::Result<ncmimo_core::training::Profile, String> {
    parse_profile(s).map_err(|e| e.to_string())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out, profile } => cmd_train(&config, seed, &out, profile),
        Command::Eval { model, snr, trials, out, baseline, seed, min_errors } => {
            cmd_eval(&model, &snr, trials, out.as_deref(), baseline, seed, min_errors)
        }
        Command::Sweep { grid, out, parallel, profile, seed, dry_run } => {
            cmd_sweep(&grid, out.as_deref(), parallel, profile, seed, dry_run)
        }
        Command::Export { model, what, out, seed, snr, count } => {
            cmd_export(&model, what, out.as_deref(), seed, snr, count)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_model(path: &Path) -> Result<ModelArtifact> {
    ModelArtifact::load(path).map_err(|e| match e {
        CliError::Io { path, source } => CliError::usage(format!("cannot read model {}: {source}", path.display())),
        other => other,
    })
}

/// Write the artifact and both logs of a run into `dir`.
pub fn write_run(dir: &Path, run: &TrainingRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    if let Some(model) = ModelArtifact::from_run(run) {
        model.save(&dir.join(MODEL_FILE))?;
    }
    csvio::write_train_log(create(&dir.join(TRAIN_LOG_FILE))?, &run.log)?;
    csvio::write_eval_log(create(&dir.join(EVAL_LOG_FILE))?, &run.evals)?;
    Ok(())
}

fn cmd_train(
    config: &Path,
    seed: Option<u64>,
    out: &Path,
    profile: Option<ncmimo_core::training::Profile>,
) -> Result<()> {
    let cfg = RunConfigFile::load(config)?.resolve(seed, profile)?;
    let run = train(&cfg)?;
    write_run(out, &run)?;
    match run.stop {
        StopReason::Diverged { iteration } => Err(CliError::Diverged { iteration }),
        stop => {
            if let Some(best) = &run.best {
                eprintln!(
                    "stop: {}  iterations: {}  best val_bler: {:?} at iteration {}",
                    stop.name(),
                    run.log.len(),
                    best.val_bler,
                    best.iteration
                );
            }
            Ok(())
        }
    }
}

/// Parse `start:stop:step`.
pub fn parse_snr_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::usage(format!("--snr must look like start:stop:step, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> =
        parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
    snr_grid(v[0], v[1], v[2]).map_err(|e| CliError::usage(format!("--snr: {e}")))
}

fn cmd_eval(
    model: &Path,
    snr: &str,
    trials: u64,
    out: Option<&Path>,
    baseline: Baseline,
    seed: u64,
    min_errors: Option<u64>,
) -> Result<()> {
    if trials == 0 {
        return Err(CliError::usage("--trials must be >= 1"));
    }
    let snrs = parse_snr_range(snr)?;
    let model = load_model(model)?;
    let mut decoders = vec![&model.decoder];
    let exact = DecoderSpec::ExactMl;
    let genie = DecoderSpec::CoherentMl;
    match baseline {
        Baseline::Exactml => decoders.push(&exact),
        Baseline::Coherent => decoders.push(&genie),
        Baseline::None => {}
    }
    let curves = evaluate_curves(&model, &decoders, &snrs, trials, min_errors, seed)?;
    let mut w = output(out)?;
    csvio::write_curves(&mut w, &curves)?;
    w.flush().map_err(|e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e))
}

/// Paired curves for `decoders` on the model's codebook. Point `i` draws
/// from substream `i` of the eval stream, so results depend only on `seed`.
pub fn evaluate_curves(
    model: &ModelArtifact,
    decoders: &[&DecoderSpec],
    snrs: &[f64],
    trials: u64,
    min_errors: Option<u64>,
    seed: u64,
) -> Result<Vec<BlerCurve>> {
    let rng = RngStream::new(seed, EVAL_STREAM);
    let mut curves: Vec<BlerCurve> =
        decoders.iter().map(|d| BlerCurve { decoder: d.name().into(), points: Vec::new() }).collect();
    for job in point_jobs(&model.codebook, decoders, model.op.n, snrs, &rng) {
        let points = match min_errors {
            Some(min) => job.run_adaptive(min, DEFAULT_CHUNK, trials)?,
            None => job.run(trials, DEFAULT_CHUNK)?,
        };
        for (c, p) in curves.iter_mut().zip(points) {
            c.points.push(p);
        }
    }
    Ok(curves)
}

#[derive(serde::Serialize)]
struct DryRunRecord {
    index: usize,
    k: u32,
    #[serde(rename = "L")]
    l: usize,
    m: usize,
    n: usize,
    decoder: &'static str,
    lambda: Option<f64>,
    depth: Option<usize>,
    hidden: Option<usize>,
    snr_db: f64,
    seed: u64,
    batch: usize,
    max_iterations: usize,
}

impl DryRunRecord {
    fn new(index: usize, c: &TrainConfig) -> Self {
        let (lambda, depth, hidden) = match c.decoder {
            ncmimo_core::training::DecoderConfig::Pml { lambda } => (Some(lambda), None, None),
            ncmimo_core::training::DecoderConfig::Nn { depth, hidden, .. } => (None, Some(depth), Some(hidden)),
        };
        Self {
            index,
            k: c.op.k,
            l: c.op.l,
            m: c.op.m,
            n: c.op.n,
            decoder: c.decoder.name(),
            lambda,
            depth,
            hidden,
            snr_db: c.snr_db,
            seed: c.seed,
            batch: c.batch,
            max_iterations: c.max_iterations,
        }
    }
}

#[derive(serde::Serialize)]
struct SummaryRecord {
    rank: usize,
    index: usize,
    dir: String,
    status: &'static str,
    k: u32,
    #[serde(rename = "L")]
    l: usize,
    m: usize,
    n: usize,
    decoder: &'static str,
    lambda: Option<f64>,
    depth: Option<usize>,
    hidden: Option<usize>,
    snr_db: f64,
    seed: u64,
    best_val_bler: Option<f64>,
    best_iteration: Option<usize>,
    iterations: Option<usize>,
    final_objective: Option<f64>,
    stop_reason: Option<&'static str>,
    error: Option<String>,
}

pub fn run_dir_name(index: usize) -> String {
    format!("run_{index:04}")
}

/// Runs that finished cleanly come first, ordered by best validation BLER,
/// then final objective, then index. Diverged runs follow, failures last.
fn sweep_order(outcomes: &[ncmimo_core::Result<TrainingRun>]) -> Vec<usize> {
    let class = |o: &ncmimo_core::Result<TrainingRun>| match o {
        Ok(r) if !matches!(r.stop, StopReason::Diverged { .. }) => 0,
        Ok(_) => 1,
        Err(_) => 2,
    };
    let key = |o: &ncmimo_core::Result<TrainingRun>| {
        let r = o.as_ref().ok();
        (
            r.and_then(|r| r.best.as_ref()).map_or(f64::INFINITY, |b| b.val_bler),
            r.and_then(|r| r.final_objective()).filter(|v| v.is_finite()).unwrap_or(f64::INFINITY),
        )
    };
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(&outcomes[a]), key(&outcomes[b]));
        class(&outcomes[a])
            .cmp(&class(&outcomes[b]))
            .then(ka.0.total_cmp(&kb.0))
            .then(ka.1.total_cmp(&kb.1))
            .then(a.cmp(&b))
    });
    order
}

fn cmd_sweep(
    grid: &Path,
    out: Option<&Path>,
    parallel: usize,
    profile: Option<ncmimo_core::training::Profile>,
    seed: Option<u64>,
    dry_run: bool,
) -> Result<()> {
    let configs = GridFile::load(grid)?.expand(seed, profile)?;
    if dry_run {
        let mut w = csv::Writer::from_writer(io::stdout().lock());
        for (i, c) in configs.iter().enumerate() {
            w.serialize(DryRunRecord::new(i, c))?;
        }
        w.flush().map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
        return Ok(());
    }
    let out = out.ok_or_else(|| CliError::usage("sweep needs --out unless --dry-run is given"))?;
    if parallel == 0 {
        return Err(CliError::usage("--parallel must be >= 1"));
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {parallel} threads: {e}")))?;
    // Each run owns its tape, optimizer and seed; files are written per run
    // as soon as it finishes.
    let outcomes: Vec<ncmimo_core::Result<TrainingRun>> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let outcome = train(cfg);
                if let Ok(run) = &outcome {
                    if let Err(e) = write_run(&out.join(run_dir_name(i)), run) {
                        eprintln!("run {i}: {e}");
                    }
                }
                eprintln!(
                    "run {i}/{}: {}",
                    configs.len(),
                    match &outcome {
                        Ok(r) => r.stop.name().to_string(),
                        Err(e) => format!("failed: {e}"),
                    }
                );
                outcome
            })
            .collect()
    });
    let mut w = csv::Writer::from_writer(create(&out.join(SUMMARY_FILE))?);
    for (rank, &i) in sweep_order(&outcomes).iter().enumerate() {
        let run = outcomes[i].as_ref().ok();
        let status = match &outcomes[i] {
            Ok(r) if matches!(r.stop, StopReason::Diverged { .. }) => "diverged",
            Ok(_) => "ok",
            Err(_) => "failed",
        };
        let c = DryRunRecord::new(i, &configs[i]);
        w.serialize(SummaryRecord {
            rank: rank + 1,
            index: i,
            dir: run_dir_name(i),
            status,
            k: c.k,
            l: c.l,
            m: c.m,
            n: c.n,
            decoder: c.decoder,
            lambda: c.lambda,
            depth: c.depth,
            hidden: c.hidden,
            snr_db: c.snr_db,
            seed: c.seed,
            best_val_bler: run.and_then(|r| r.best.as_ref()).map(|b| b.val_bler),
            best_iteration: run.and_then(|r| r.best.as_ref()).map(|b| b.iteration),
            iterations: run.map(|r| r.log.len()),
            final_objective: run.and_then(|r| r.final_objective()),
            stop_reason: run.map(|r| r.stop.name()),
            error: outcomes[i].as_ref().err().map(|e| e.to_string()),
        })?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    let ok = outcomes.iter().filter(|o| matches!(o, Ok(r) if !matches!(r.stop, StopReason::Diverged { .. }))).count();
    eprintln!("{ok} of {} runs succeeded", outcomes.len());
    if ok == 0 {
        return Err(CliError::Format("no sweep run succeeded; see summary.csv".into()));
    }
    Ok(())
}

fn cmd_export(model: &Path, what: Export, out: Option<&Path>, seed: u64, snr: Option<f64>, count: usize) -> Result<()> {
    let model = load_model(model)?;
    let mut w = output(out)?;
    match what {
        Export::Constellation => csvio::write_constellation(&mut w, &model.codebook)?,
        Export::PosteriorDemo => {
            let snr = snr.unwrap_or(model.meta.train_snr_db);
            posterior_demo(&mut w, &model, snr, count, seed)?
        }
    }
    w.flush().map_err(|e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e))
}

/// `sample, message, decision, p_0 .. p_{2^k - 1}` for `count` seeded
/// transmissions at `snr_db`.
pub fn posterior_demo<W: Write>(out: W, model: &ModelArtifact, snr_db: f64, count: usize, seed: u64) -> Result<()> {
    let cb = &model.codebook;
    let cfg = ChannelConfig::from_snr_db(cb.m(), model.op.n, cb.l(), snr_db)
        .map_err(|e| CliError::usage(format!("--snr: {e}")))?;
    let dec = model.decoder.prepare(cb, cfg.sigma2)?;
    let mut rng = RngStream::new(seed, DEMO_STREAM);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample".to_string(), "message".into(), "decision".into()];
    header.extend((0..cb.len()).map(|j| format!("p_{j}")));
    w.write_record(&header)?;
    for sample in 0..count {
        let msg = rng.below(cb.len() as u64) as usize;
        let (h, z) = sample_block(&cfg, &mut rng);
        let y = h.matmul(&cb.words()[msg])?.add(&z)?;
        let logits = dec.logits(&y, &h)?;
        let mut rec = vec![sample.to_string(), msg.to_string(), hard_decision(&logits).to_string()];
        rec.extend(softmax(&logits).iter().map(|p| format!("{p:?}")));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| CliError::Format(format!("csv flush failed: {}", e.error())))?;
    Ok(())
}
