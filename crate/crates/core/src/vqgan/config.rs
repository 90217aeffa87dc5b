use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::DiscriminatorConfig;
use crate::vq::BetaPlacement;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Top branch only.
    Stage1,
    /// All three branches.
    Stage2,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Stage1 => 1,
            Stage::Stage2 => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::Stage1),
            2 => Ok(Stage::Stage2),
            _ => Err(Error::Config(format!("stage must be 1 or 2, got {n}"))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage{}", self.number())
    }
}

/// Spatial compression of each branch's latent grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionFactors {
    pub top: usize,
    pub middle: usize,
    pub bottom: usize,
}

impl Default for CompressionFactors {
    fn default() -> Self {
        Self {
            top: 8,
            middle: 4,
            bottom: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the whole VQ loss (reconstruction plus codebook terms).
    pub vq: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            vq: 1.0,
            perceptual: 1.0,
            adversarial: 0.8,
        }
    }
}

/// Step budget and optimizer settings of one training stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Multiply `base_lr` by the batch size.
    pub scale_lr_by_batch: bool,
}

impl StageSchedule {
    pub fn lr(&self) -> f64 {
        if self.scale_lr_by_batch {
            self.base_lr * self.batch_size as f64
        } else {
            self.base_lr
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamBetas {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamBetas {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsVqganConfig {
    pub base_channels: usize,
    pub embed_dim: usize,
    pub codebook_size: usize,
    #[serde(default)]
    pub compression_factors: CompressionFactors,
    pub crop_size: usize,
    pub stage: Stage,
    /// Residual blocks per stage of every encoder/decoder path.
    pub res_blocks: usize,
    /// Upper bound on GroupNorm groups.
    pub norm_groups: usize,
    /// One codebook per branch instead of one shared codebook.
    #[serde(default)]
    pub per_branch_codebooks: bool,
    pub beta: f64,
    #[serde(default)]
    pub beta_placement: BetaPlacement,
    #[serde(default)]
    pub loss_weights: LossWeights,
    pub discriminator: DiscriminatorConfig,
    /// Generator steps before the adversarial term and critic updates start.
    #[serde(default)]
    pub discriminator_start: usize,
    #[serde(default)]
    pub optimizer: AdamBetas,
    pub stage1: StageSchedule,
    pub stage2: StageSchedule,
    /// Learning-rate divisor for the shared stem and top branch in stage 2.
    pub top_lr_divisor: f64,
    /// Seed of the fixed random feature pyramid used by the perceptual loss.
    pub perceptual_seed: u64,
}

impl MsVqganConfig {
    pub fn paper() -> Self {
        Self {
            base_channels: 128,
            embed_dim: 256,
            codebook_size: 1024,
            compression_factors: CompressionFactors::default(),
            crop_size: 256,
            stage: Stage::Stage1,
            res_blocks: 2,
            norm_groups: 32,
            per_branch_codebooks: false,
            beta: 0.25,
            beta_placement: BetaPlacement::AsPrinted,
            loss_weights: LossWeights::default(),
            discriminator: DiscriminatorConfig::default(),
            discriminator_start: 0,
            optimizer: AdamBetas::default(),
            stage1: StageSchedule {
                steps: 100_000,
                batch_size: 32,
                base_lr: 4.5e-6,
                scale_lr_by_batch: true,
            },
            stage2: StageSchedule {
                steps: 100_000,
                batch_size: 24,
                base_lr: 4.5e-6,
                scale_lr_by_batch: true,
            },
            top_lr_divisor: 4.0,
            perceptual_seed: 0x5eed,
        }
    }

    pub fn tiny() -> Self {
        Self {
            base_channels: 16,
            embed_dim: 32,
            codebook_size: 64,
            crop_size: 64,
            // at this width the full-weight critic costs reconstruction quality
            loss_weights: LossWeights {
                adversarial: 0.2,
                ..LossWeights::default()
            },
            discriminator: DiscriminatorConfig {
                base_channels: 16,
                layers: 3,
            },
            stage1: StageSchedule {
                steps: 2000,
                batch_size: 1,
                base_lr: 3e-4,
                scale_lr_by_batch: false,
            },
            stage2: StageSchedule {
                steps: 2000,
                batch_size: 1,
                base_lr: 3e-4,
                scale_lr_by_batch: false,
            },
            ..Self::paper()
        }
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    pub fn schedule(&self) -> &StageSchedule {
        match self.stage {
            Stage::Stage1 => &self.stage1,
            Stage::Stage2 => &self.stage2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self;
        let positive = [
            ("base_channels", c.base_channels),
            ("embed_dim", c.embed_dim),
            ("codebook_size", c.codebook_size),
            ("crop_size", c.crop_size),
            ("res_blocks", c.res_blocks),
            ("norm_groups", c.norm_groups),
            ("stage1.batch_size", c.stage1.batch_size),
            ("stage2.batch_size", c.stage2.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if c.compression_factors != CompressionFactors::default() {
            return Err(Error::Config(format!(
                "compression factors {:?} do not match the architecture's downsampling (top 8, middle 4, bottom 2)",
                c.compression_factors
            )));
        }
        if c.crop_size % 8 != 0 {
            return Err(Error::Config(format!("crop_size {} is not divisible by 8", c.crop_size)));
        }
        if !(c.beta >= 0.0 && c.beta.is_finite()) {
            return Err(Error::Config(format!("beta {} must be finite and non-negative", c.beta)));
        }
        let w = c.loss_weights;
        for (name, v) in [("vq", w.vq), ("perceptual", w.perceptual), ("adversarial", w.adversarial)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and non-negative")));
            }
        }
        for (name, s) in [("stage1", &c.stage1), ("stage2", &c.stage2)] {
            if !(s.base_lr >= 0.0 && s.base_lr.is_finite()) {
                return Err(Error::Config(format!("{name}.base_lr must be finite and non-negative")));
            }
        }
        if !(c.top_lr_divisor > 0.0 && c.top_lr_divisor.is_finite()) {
            return Err(Error::Config("top_lr_divisor must be positive".into()));
        }
        let o = c.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        c.discriminator.validate()?;
        if c.crop_size < c.discriminator.min_input() {
            return Err(Error::Config(format!(
                "crop_size {} is below the critic's minimum input {}",
                c.crop_size,
                c.discriminator.min_input()
            )));
        }
        Ok(())
    }
}

/// Per-branch quantizer choice. Only the bottom branch may use `k > 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerMode {
    Nearest,
    TopK { top: usize, middle: usize, bottom: usize },
}

impl QuantizerMode {
    /// Nearest search on top and middle, `k`-th closest on bottom.
    pub fn bottom(k: usize) -> Self {
        QuantizerMode::TopK {
            top: 1,
            middle: 1,
            bottom: k,
        }
    }

    /// `(top, middle, bottom)` levels.
    pub fn levels(self) -> Result<(usize, usize, usize)> {
        match self {
            QuantizerMode::Nearest => Ok((1, 1, 1)),
            QuantizerMode::TopK { top, middle, bottom } => {
                if top != 1 || middle != 1 {
                    return Err(Error::Config(format!(
                        "top-k quantization is only for the bottom branch (got top k={top}, middle k={middle})"
                    )));
                }
                if bottom == 0 {
                    return Err(Error::Range("bottom k must be at least 1".into()));
                }
                Ok((1, 1, bottom))
            }
        }
    }
}
