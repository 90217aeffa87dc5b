//! Recurrent x4 video super-resolution and its two-stage training.

mod config;
mod io;
mod net;
mod train;

pub use config::{VsrConfig, VsrLossWeights, VsrSchedule, SCALE};
pub use net::{bicubic_x4, RecurrentState, SrStream, StepNodes, VsrNet, PREFIX};
pub use train::{
    sample_hr_window, stage_degradation, train_vsr, VsrLosses, VsrObserver, VsrSample, VsrStepRecord, VsrTrainSetup,
    VsrTrainer,
};
pub use io::{from_checkpoint, to_checkpoint};
