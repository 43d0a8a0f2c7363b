//! Objectives, optimizer, training loop and sweeps.

pub mod adam;
pub mod objective;
pub mod sweep;
pub mod train;

pub use adam::AdamState;
pub use objective::{nn_objective, pml_objective, sample_batch, ObjectiveNodes, TrainingBatch};
pub use sweep::{rank, sweep, Grid, SweepEntry};
pub use train::{
    train, DecoderConfig, EvalRow, LogRow, Profile, Snapshot, StopReason, TrainConfig, Trainer, TrainingRun,
};
