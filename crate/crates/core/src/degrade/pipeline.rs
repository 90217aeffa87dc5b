use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::compress::{compress, CompressMethod, QUALITY_RANGE};
use super::ops::{add_noise, blur, down};
use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};
use crate::resample::ResizeMethod;
use crate::vq::sample_degradation_level;
use crate::vqgan::{MsVqgan, QuantizerMode, Stage};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurConfig {
    #[serde(default)]
    pub kernel: KernelFamily,
    /// Inclusive `[min, max]` range of the kernel's standard deviation in
    /// pixels.
    pub sigma: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Inclusive range in `[0, 1]` intensity units.
    pub sigma: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownConfig {
    pub scale: usize,
    /// Resampling methods drawn uniformly per clip.
    pub methods: Vec<ResizeMethod>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqdConfig {
    pub enable: bool,
    /// Stage-2 degradation model; the CLI loads it from here.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Largest top-k level on the bottom branch.
    pub max_level: usize,
    /// Chance that a clip goes through the learned stage at all.
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressConfig {
    /// Inclusive quality range, each end in `1..=100`.
    pub quality: [u8; 2],
    #[serde(default)]
    pub method: CompressMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationConfig {
    pub blur: BlurConfig,
    pub noise: NoiseConfig,
    pub down: DownConfig,
    pub vqd: VqdConfig,
    pub compress: CompressConfig,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            blur: BlurConfig {
                kernel: KernelFamily::Gaussian,
                sigma: [0.2, 3.0],
            },
            noise: NoiseConfig {
                sigma: [0.0, 10.0 / 255.0],
            },
            down: DownConfig {
                scale: 4,
                methods: ResizeMethod::ALL.to_vec(),
            },
            vqd: VqdConfig {
                enable: true,
                checkpoint: None,
                max_level: 50,
                probability: 1.0,
            },
            compress: CompressConfig {
                quality: [30, 95],
                method: CompressMethod::BuiltinDct,
            },
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite()) {
        return Err(Error::Config(format!("{name} range {r:?} must be finite, non-negative and ordered")));
    }
    Ok(())
}

fn sample(r: [f64; 2], rng: &mut impl Rng) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

impl DegradationConfig {
    /// Basic operators only.
    pub fn basic_only(mut self) -> Self {
        self.vqd.enable = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_range("blur.sigma", self.blur.sigma)?;
        check_range("noise.sigma", self.noise.sigma)?;
        if self.down.scale < 1 {
            return Err(Error::Config("down.scale must be at least 1".into()));
        }
        if self.down.methods.is_empty() {
            return Err(Error::Config("down.methods must not be empty".into()));
        }
        if self.vqd.max_level < 1 {
            return Err(Error::Config("vqd.max_level (K) must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.vqd.probability) {
            return Err(Error::Config(format!("vqd.probability {} outside [0, 1]", self.vqd.probability)));
        }
        let [lo, hi] = self.compress.quality;
        if !QUALITY_RANGE.contains(&lo) || !QUALITY_RANGE.contains(&hi) || lo > hi {
            return Err(Error::Config(format!(
                "compress.quality {:?} must be an ordered range inside {QUALITY_RANGE:?}",
                self.compress.quality
            )));
        }
        Ok(())
    }
}

/// Pipeline stages in application order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Blur,
    Noise,
    Down,
    Vqd,
    Compress,
}

/// Parameters drawn for one clip, and the stages actually applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipDegradation {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub down_method: ResizeMethod,
    /// Bottom-branch level, when the learned stage ran.
    pub vqd_level: Option<usize>,
    pub quality: u8,
    pub trace: Vec<StageKind>,
}

/// Independent stream for one clip, so clips can be processed in any order.
pub fn clip_rng(master: u64, clip_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::seed::derive(master, clip_id))
}

/// Learned degradation at a fixed bottom-branch level `k`. Frames whose
/// sides are not multiples of 8 are reflect-padded and cropped back.
pub fn vq_degrade_at_level(frame: &Frame, model: &MsVqgan<f32>, k: usize) -> Result<Frame> {
    if model.stage() != Stage::Stage2 {
        return Err(Error::Stage {
            expected: 2,
            found: model.stage().number(),
        });
    }
    let (h, w) = frame.dims();
    let padded = frame.pad_reflect_to_multiple(8);
    let r = model.reconstruct(&padded.to_tensor(), QuantizerMode::bottom(k), None)?;
    Frame::from_tensor(&r.output, 0)?.crop(0, 0, h, w)
}

/// Learned degradation with `k` drawn uniformly from `[1, max_level]`.
pub fn vq_degrade(frame: &Frame, model: &MsVqgan<f32>, max_level: usize, rng: &mut impl Rng) -> Result<Frame> {
    let k = sample_degradation_level(max_level, rng)?;
    vq_degrade_at_level(frame, model, k)
}

/// Applies the full pipeline to every frame of `hr`. All random parameters
/// are drawn once per clip; only the noise differs between frames.
pub fn degrade_clip_traced(
    hr: &Clip,
    cfg: &DegradationConfig,
    model: Option<&MsVqgan<f32>>,
    rng: &mut impl Rng,
) -> Result<(Clip, ClipDegradation)> {
    cfg.validate()?;
    let (h, w) = hr.dims().ok_or_else(|| Error::Empty("clip has no frames".into()))?;
    let s = cfg.down.scale;
    if h % s != 0 || w % s != 0 {
        return Err(Error::Shape(format!("frame {w}x{h} is not divisible by the scale {s}")));
    }
    let model = match (cfg.vqd.enable, model) {
        (true, None) => {
            return Err(Error::Config(
                "the learned degradation stage is enabled but no model was supplied".into(),
            ))
        }
        (true, Some(m)) => Some(m),
        (false, _) => None,
    };

    let blur_sigma = sample(cfg.blur.sigma, rng);
    let noise_sigma = sample(cfg.noise.sigma, rng);
    let down_method = *cfg.down.methods.choose(rng).expect("validated non-empty");
    let vqd_level = match model {
        Some(_) if rng.gen_bool(cfg.vqd.probability) => Some(sample_degradation_level(cfg.vqd.max_level, rng)?),
        _ => None,
    };
    let quality = rng.gen_range(cfg.compress.quality[0]..=cfg.compress.quality[1]);

    let mut trace = vec![StageKind::Blur, StageKind::Noise, StageKind::Down];
    let mut frames = Vec::with_capacity(hr.len());
    for f in &hr.frames {
        let x = blur(f, blur_sigma)?;
        let x = add_noise(&x, noise_sigma, rng)?;
        let mut x = down(&x, s, down_method)?;
        if let (Some(m), Some(k)) = (model, vqd_level) {
            x = vq_degrade_at_level(&x, m, k)?;
        }
        frames.push(x);
    }
    if vqd_level.is_some() {
        trace.push(StageKind::Vqd);
    }
    let out = compress(&Clip::new(frames)?, quality, cfg.compress.method)?;
    trace.push(StageKind::Compress);
    Ok((
        out,
        ClipDegradation {
            blur_sigma,
            noise_sigma,
            down_method,
            vqd_level,
            quality,
            trace,
        },
    ))
}

pub fn degrade_clip(hr: &Clip, cfg: &DegradationConfig, model: Option<&MsVqgan<f32>>, rng: &mut impl Rng) -> Result<Clip> {
    Ok(degrade_clip_traced(hr, cfg, model, rng)?.0)
}
