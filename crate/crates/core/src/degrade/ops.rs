use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::resample::{downscale, gaussian_blur, ResizeMethod};

/// One basic operator with its sampled parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BasicOp {
    Blur { sigma: f64 },
    Noise { sigma: f64 },
    Down { scale: usize, method: ResizeMethod },
}

/// Isotropic Gaussian blur; `sigma == 0` is the identity.
pub fn blur(frame: &Frame, sigma: f64) -> Result<Frame> {
    gaussian_blur(frame, sigma)
}

/// Additive zero-mean Gaussian noise, independent per channel, clamped to
/// `[0, 1]`.
pub fn add_noise(frame: &Frame, sigma: f64, rng: &mut impl Rng) -> Result<Frame> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("noise sigma {sigma} must be finite and non-negative")));
    }
    if sigma == 0.0 {
        return Ok(frame.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let mut out = frame.clone();
    for v in out.data_mut() {
        *v = (*v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}

pub fn down(frame: &Frame, scale: usize, method: ResizeMethod) -> Result<Frame> {
    downscale(frame, scale, method)
}

pub fn apply_basic_operator(frame: &Frame, op: BasicOp, rng: &mut impl Rng) -> Result<Frame> {
    match op {
        BasicOp::Blur { sigma } => blur(frame, sigma),
        BasicOp::Noise { sigma } => add_noise(frame, sigma, rng),
        BasicOp::Down { scale, method } => down(frame, scale, method),
    }
}
