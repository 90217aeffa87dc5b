//! HR-SR enhancement: super-resolve a ground-truth frame, then bicubic
//! downsample back to its own size.

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::resample::{downscale, gaussian_blur, upscale, ResizeMethod};

/// A super-resolution model of fixed integer scale.
pub trait Enhancer: Send + Sync {
    fn scale(&self) -> usize;
    fn enhance(&self, frame: &Frame) -> Result<Frame>;
}

/// Bicubic upsampling; the identity-class enhancer.
#[derive(Clone, Copy, Debug)]
pub struct BicubicEnhancer {
    pub scale: usize,
}

impl Enhancer for BicubicEnhancer {
    fn scale(&self) -> usize {
        self.scale
    }

    fn enhance(&self, frame: &Frame) -> Result<Frame> {
        upscale(frame, self.scale, ResizeMethod::Bicubic)
    }
}

/// Bicubic upsampling followed by an unsharp mask, which crisps edges.
#[derive(Clone, Copy, Debug)]
pub struct UnsharpEnhancer {
    pub scale: usize,
    pub sigma: f64,
    pub amount: f32,
}

impl Enhancer for UnsharpEnhancer {
    fn scale(&self) -> usize {
        self.scale
    }

    fn enhance(&self, frame: &Frame) -> Result<Frame> {
        let up = upscale(frame, self.scale, ResizeMethod::Bicubic)?;
        let blur = gaussian_blur(&up, self.sigma)?;
        let mut out = up.clone();
        for ((o, &u), &b) in out.data_mut().iter_mut().zip(up.data()).zip(blur.data()) {
            *o = (u + self.amount * (u - b)).clamp(0.0, 1.0);
        }
        Ok(out)
    }
}

pub fn hr_sr_enhance(frame: &Frame, enhancer: &dyn Enhancer) -> Result<Frame> {
    let s = enhancer.scale();
    if s == 0 {
        return Err(Error::Parameter("enhancer scale must be at least 1".into()));
    }
    let up = enhancer.enhance(frame)?;
    let (h, w) = frame.dims();
    if up.dims() != (h * s, w * s) {
        return Err(Error::Contract(format!(
            "enhancer of scale {s} returned {}x{} for a {w}x{h} frame",
            up.width(),
            up.height()
        )));
    }
    downscale(&up, s, ResizeMethod::Bicubic)
}
