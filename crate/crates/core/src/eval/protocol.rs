//! No-reference evaluation protocol: score random crops of every
//! `frame_stride`-th frame and average over crops, frames and repetitions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};

/// Maps an image crop to a quality score.
pub trait Scorer: Send + Sync {
    fn score(&self, crop: &Frame) -> Result<f64>;
}

impl<F: Fn(&Frame) -> Result<f64> + Send + Sync> Scorer for F {
    fn score(&self, crop: &Frame) -> Result<f64> {
        self(crop)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&self, _crop: &Frame) -> Result<f64> {
        Ok(self.0)
    }
}

/// Mean squared luma gradient (forward differences, 0..1 scale). A
/// deterministic stand-in for a learned quality model; higher means more
/// local detail.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradientEnergyScorer;

impl Scorer for GradientEnergyScorer {
    fn score(&self, crop: &Frame) -> Result<f64> {
        let (h, w) = crop.dims();
        if h < 2 || w < 2 {
            return Err(Error::Shape(format!("gradient energy needs at least 2x2 pixels, got {w}x{h}")));
        }
        let y = |r: usize, c: usize| {
            0.299 * crop.get(0, r, c) as f64 + 0.587 * crop.get(1, r, c) as f64 + 0.114 * crop.get(2, r, c) as f64
        };
        let mut s = 0.0;
        for r in 0..h - 1 {
            for c in 0..w - 1 {
                let gx = y(r, c + 1) - y(r, c);
                let gy = y(r + 1, c) - y(r, c);
                s += gx * gx + gy * gy;
            }
        }
        Ok(s / ((h - 1) * (w - 1)) as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocolConfig {
    pub frame_stride: usize,
    pub crops_per_frame: usize,
    pub crop_size: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for EvalProtocolConfig {
    fn default() -> Self {
        Self {
            frame_stride: 10,
            crops_per_frame: 20,
            crop_size: 224,
            repetitions: 3,
            seed: 0,
        }
    }
}

impl EvalProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_stride == 0 || self.crops_per_frame == 0 || self.crop_size == 0 || self.repetitions == 0 {
            return Err(Error::Config("evaluation protocol counts must all be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub mean: f64,
    pub per_repetition: Vec<f64>,
    /// Frame indices scored in each repetition.
    pub frames: Vec<usize>,
    pub scorer_calls_per_repetition: usize,
}

/// Frames `0, stride, 2 * stride, ...`.
pub fn sampled_frames(len: usize, stride: usize) -> Vec<usize> {
    (0..len).step_by(stride.max(1)).collect()
}

pub fn nr_iqa_protocol(clip: &Clip, scorer: &dyn Scorer, cfg: &EvalProtocolConfig) -> Result<ProtocolResult> {
    cfg.validate()?;
    if clip.is_empty() {
        return Err(Error::Empty("cannot evaluate an empty clip".into()));
    }
    let frames = sampled_frames(clip.len(), cfg.frame_stride);
    let c = cfg.crop_size;
    for &t in &frames {
        let (h, w) = clip.frames[t].dims();
        if h < c || w < c {
            return Err(Error::Shape(format!("frame {t} is {w}x{h}, smaller than the {c}x{c} crop")));
        }
    }
    let mut per_repetition = Vec::with_capacity(cfg.repetitions);
    let mut calls = 0;
    for rep in 0..cfg.repetitions {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(cfg.seed, &format!("nr-iqa/{rep}")));
        let mut sum = 0.0;
        calls = 0;
        for &t in &frames {
            let f = &clip.frames[t];
            let (h, w) = f.dims();
            for _ in 0..cfg.crops_per_frame {
                let top = rng.gen_range(0..=h - c);
                let left = rng.gen_range(0..=w - c);
                sum += scorer.score(&f.crop(top, left, c, c)?)?;
                calls += 1;
            }
        }
        per_repetition.push(sum / calls as f64);
    }
    let mean = per_repetition.iter().sum::<f64>() / per_repetition.len() as f64;
    Ok(ProtocolResult {
        mean,
        per_repetition,
        frames,
        scorer_calls_per_repetition: calls,
    })
}
