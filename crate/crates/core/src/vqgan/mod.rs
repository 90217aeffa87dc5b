//! The three-branch multi-scale VQGAN degradation model.

pub mod blocks;
mod config;
mod io;
mod model;
mod train;

pub use config::{AdamBetas, CompressionFactors, LossWeights, MsVqganConfig, QuantizerMode, Stage, StageSchedule};
pub use model::{
    architecture_diff, BranchFeatures, DecoderNodes, EncoderNodes, ForwardNodes, LossReport, MsVqgan, Objective, Reconstruction,
    TOP_SCOPES,
};
pub use train::{component_rng, sample_crops, train_stage1, train_stage2, Control, StepRecord, TrainObserver, VqganTrainer};
pub use io::{from_checkpoint, load_stage1_model, load_stage2_model, to_checkpoint};
