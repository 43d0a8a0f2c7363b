//! Hyperparameter sweeps and the experiment grids.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::modem::OperatingPoint;
use crate::networks::Family;
use crate::rng::derive_seed;
use crate::training::train::{train, DecoderConfig, Profile, TrainConfig, TrainingRun};

/// One grid entry and what became of it.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub index: usize,
    pub outcome: Result<TrainingRun>,
}

impl SweepEntry {
    /// Best validation BLER, if the run produced a snapshot.
    pub fn best_bler(&self) -> Option<f64> {
        self.outcome.as_ref().ok()?.best.as_ref().map(|b| b.val_bler)
    }

    fn final_objective(&self) -> f64 {
        self.outcome.as_ref().ok().and_then(|r| r.final_objective()).filter(|v| v.is_finite()).unwrap_or(f64::INFINITY)
    }
}

/// Run every configuration in order.
pub fn sweep(grid: &[TrainConfig]) -> Result<Vec<SweepEntry>> {
    if grid.is_empty() {
        return Err(Error::arg("sweep grid is empty"));
    }
    Ok(grid.iter().enumerate().map(|(index, cfg)| SweepEntry { index, outcome: train(cfg) }).collect())
}

/// Positions into `entries`, best first: by best-snapshot BLER, then final
/// objective, then index. Runs without a snapshot come last.
pub fn rank(entries: &[SweepEntry]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&entries[a], &entries[b]);
        let key = |e: &SweepEntry| e.best_bler().unwrap_or(f64::INFINITY);
        key(ea)
            .total_cmp(&key(eb))
            .then(ea.final_objective().total_cmp(&eb.final_objective()))
            .then(ea.index.cmp(&eb.index))
    });
    order
}

/// A Cartesian grid of operating points, decoders and training SNRs.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub ops: Vec<OperatingPoint>,
    pub decoders: Vec<DecoderConfig>,
    pub snrs_db: Vec<f64>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.ops.len() * self.decoders.len() * self.snrs_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Configurations in operating point, decoder, SNR order. Run `i` gets
    /// seed `derive_seed(master_seed, i)`, independent of scheduling.
    pub fn expand(&self, profile: Profile, master_seed: u64) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for op in &self.ops {
            for dec in &self.decoders {
                for &snr in &self.snrs_db {
                    let seed = derive_seed(master_seed, out.len() as u64);
                    out.push(TrainConfig::new(*op, *dec, snr, profile, seed));
                }
            }
        }
        out
    }
}

/// k in {2, 4, 6, 8} crossed with L = 2, m = 2, n in {2, 3, 4} and
/// L = 4, (m, n) in {(2, 2), (3, 3), (4, 4)}.
pub fn full_operating_points() -> Vec<OperatingPoint> {
    let shapes = [(2, 2, 2), (2, 2, 3), (2, 2, 4), (4, 2, 2), (4, 3, 3), (4, 4, 4)];
    let mut out = Vec::new();
    for k in [2, 4, 6, 8] {
        for (l, m, n) in shapes {
            out.push(OperatingPoint { k, l, m, n });
        }
    }
    out
}

/// lambda in {1, 3, 10}.
pub fn full_pml_decoders() -> Vec<DecoderConfig> {
    [1.0, 3.0, 10.0].into_iter().map(|lambda| DecoderConfig::Pml { lambda }).collect()
}

/// MLP and ResMLP with depth in {1, 2, 3} and width in {256, 500, 1000}.
pub fn full_nn_decoders() -> Vec<DecoderConfig> {
    let mut out = Vec::new();
    for family in [Family::Mlp, Family::ResMlp] {
        for depth in [1, 2, 3] {
            for hidden in [256, 500, 1000] {
                out.push(DecoderConfig::Nn { family, depth, hidden });
            }
        }
    }
    out
}

/// 10 to 30 dB in 5 dB steps.
pub fn full_train_snrs() -> Vec<f64> {
    (0..5).map(|i| 10.0 + 5.0 * i as f64).collect()
}

/// The full experiment matrix: every operating point with every pML and
/// neural decoder setting at every training SNR.
pub fn full_grid() -> Grid {
    let mut decoders = full_pml_decoders();
    decoders.extend(full_nn_decoders());
    Grid { ops: full_operating_points(), decoders, snrs_db: full_train_snrs() }
}
