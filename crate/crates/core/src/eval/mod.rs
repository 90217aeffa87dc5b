//! Paired metrics, the no-reference crop protocol and CSV reports.

mod metrics;
mod protocol;
mod report;

pub use metrics::{clip_mean, psnr, psnr_u8, ssim, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW};
pub use protocol::{
    nr_iqa_protocol, sampled_frames, ConstantScorer, EvalProtocolConfig, GradientEnergyScorer, ProtocolResult, Scorer,
};
pub use report::{read_report, save_report, write_report, ReportRow};
