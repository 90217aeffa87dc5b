use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::{DiscriminatorConfig, GanLoss};

/// The network only supports x4.
pub const SCALE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsrSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsrLossWeights {
    pub l1: f64,
    pub perceptual: f64,
    pub gan: f64,
}

impl Default for VsrLossWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            perceptual: 1.0,
            gan: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsrConfig {
    pub channels: usize,
    pub res_blocks: usize,
    pub scale: usize,
    pub state_channels: usize,
    /// Frames per training sample.
    pub clip_len: usize,
    /// HR crop side per training sample; LR side is `crop_size / scale`.
    pub crop_size: usize,
    #[serde(default)]
    pub loss_weights: VsrLossWeights,
    pub discriminator: DiscriminatorConfig,
    pub gan_loss: GanLoss,
    pub stage1: VsrSchedule,
    pub stage2: VsrSchedule,
    pub perceptual_seed: u64,
}

impl VsrConfig {
    /// 64 channels and 15 blocks: about 1.48M parameters.
    pub fn paper() -> Self {
        Self {
            channels: 64,
            res_blocks: 15,
            scale: SCALE,
            state_channels: 64,
            clip_len: 7,
            crop_size: 256,
            loss_weights: VsrLossWeights::default(),
            discriminator: DiscriminatorConfig::default(),
            gan_loss: GanLoss::Vanilla,
            stage1: VsrSchedule {
                steps: 300_000,
                batch_size: 16,
                lr: 1e-4,
            },
            stage2: VsrSchedule {
                steps: 300_000,
                batch_size: 16,
                lr: 5e-5,
            },
            perceptual_seed: 0x5eed,
        }
    }

    pub fn tiny() -> Self {
        Self {
            channels: 16,
            res_blocks: 2,
            state_channels: 16,
            clip_len: 3,
            crop_size: 64,
            discriminator: DiscriminatorConfig {
                base_channels: 16,
                layers: 3,
            },
            stage1: VsrSchedule {
                steps: 3000,
                batch_size: 2,
                lr: 1e-3,
            },
            stage2: VsrSchedule {
                steps: 500,
                batch_size: 2,
                lr: 2e-4,
            },
            ..Self::paper()
        }
    }

    pub fn schedule(&self, stage: u8) -> Result<&VsrSchedule> {
        match stage {
            1 => Ok(&self.stage1),
            2 => Ok(&self.stage2),
            _ => Err(Error::Config(format!("VSR stage must be 1 or 2, got {stage}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != SCALE {
            return Err(Error::Config(format!("scale must be {SCALE}, got {}", self.scale)));
        }
        let counts = [
            ("channels", self.channels),
            ("res_blocks", self.res_blocks),
            ("state_channels", self.state_channels),
            ("clip_len", self.clip_len),
            ("crop_size", self.crop_size),
            ("stage1.batch_size", self.stage1.batch_size),
            ("stage2.batch_size", self.stage2.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.crop_size % self.scale != 0 {
            return Err(Error::Config(format!("crop_size {} is not divisible by {}", self.crop_size, self.scale)));
        }
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if !(s.lr >= 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("{name}.lr must be finite and non-negative")));
            }
        }
        let w = self.loss_weights;
        if ![w.l1, w.perceptual, w.gan].iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(Error::Config("VSR loss weights must be finite and non-negative".into()));
        }
        self.discriminator.validate()?;
        if self.crop_size < self.discriminator.min_input() {
            return Err(Error::Config(format!(
                "crop_size {} is below the critic's minimum input {}",
                self.crop_size,
                self.discriminator.min_input()
            )));
        }
        Ok(())
    }
}
