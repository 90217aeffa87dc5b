//! HR to LR degradation: blur, noise, downsampling, learned VQ degradation
//! and lossy compression, applied in that order.

mod compress;
mod ops;
mod pipeline;

pub use compress::{compress, crf_for_quality, dct_compress_frame, encoder_available, quant_table, CompressMethod, QUALITY_RANGE};
pub use ops::{add_noise, apply_basic_operator, blur, down, BasicOp};
pub use pipeline::{
    clip_rng, degrade_clip, degrade_clip_traced, vq_degrade, vq_degrade_at_level, BlurConfig, ClipDegradation,
    CompressConfig, DegradationConfig, DownConfig, KernelFamily, NoiseConfig, StageKind, VqdConfig,
};
