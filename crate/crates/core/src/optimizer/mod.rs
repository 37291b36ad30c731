//! Training loops: ERM, group-balanced upweighting, and online group DRO
//! (exponentiated-gradient ascent on group weights interleaved with SGD on
//! the parameters), with l2 penalty, heavy-ball momentum, and per-epoch
//! checkpoints for early stopping.

mod config;
mod eg;
mod sampler;
mod train;

pub use config::{Mode, OptimizerConfig, Sampler, Variant};
pub use eg::eg_update;
pub use sampler::BatchSampler;
pub use train::{
    dro_step, early_stop_select, select_max_earliest, train, Checkpoint, CheckpointSummary,
    DroState, HistorySummary, TrainHistory,
};
