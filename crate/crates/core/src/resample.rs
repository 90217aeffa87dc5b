//! Separable resampling (bilinear, bicubic, area) and Gaussian blur.
//!
//! Downscaling widens the kernel by the scale factor (antialiasing), and
//! every output pixel's weights are renormalized to sum to one, so constant
//! images stay constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMethod {
    Bilinear,
    Bicubic,
    Area,
}

impl ResizeMethod {
    pub const ALL: [ResizeMethod; 3] = [ResizeMethod::Bilinear, ResizeMethod::Bicubic, ResizeMethod::Area];

    fn support(self) -> f64 {
        match self {
            ResizeMethod::Bilinear => 1.0,
            ResizeMethod::Bicubic => 2.0,
            ResizeMethod::Area => 0.5,
        }
    }

    fn kernel(self, x: f64) -> f64 {
        let ax = x.abs();
        match self {
            ResizeMethod::Bilinear => (1.0 - ax).max(0.0),
            ResizeMethod::Bicubic => {
                // Keys cubic, a = -0.5
                const A: f64 = -0.5;
                if ax <= 1.0 {
                    ((A + 2.0) * ax - (A + 3.0)) * ax * ax + 1.0
                } else if ax < 2.0 {
                    (((ax - 5.0) * ax + 8.0) * ax - 4.0) * A
                } else {
                    0.0
                }
            }
            ResizeMethod::Area => {
                if ax < 0.5 {
                    1.0
                } else if ax == 0.5 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }
}

/// Taps `(first source index, weights)` for each output coordinate.
fn taps(method: ResizeMethod, n_in: usize, n_out: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let scale = n_out as f64 / n_in as f64;
    let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
    let support = method.support() * stretch;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut idx = Vec::new();
            let mut wts = Vec::new();
            for i in lo..=hi {
                let w = method.kernel((i as f64 - center) / stretch);
                if w != 0.0 {
                    idx.push(i.clamp(0, n_in as isize - 1) as usize);
                    wts.push(w);
                }
            }
            let s: f64 = wts.iter().sum();
            for w in &mut wts {
                *w /= s;
            }
            (idx, wts)
        })
        .collect()
}

/// Resizes to `width x height`. Output is clamped to `[0, 1]`.
pub fn resize(frame: &Frame, width: usize, height: usize, method: ResizeMethod) -> Result<Frame> {
    if width == 0 || height == 0 {
        return Err(Error::Shape("resize target must be non-empty".into()));
    }
    let (h_in, w_in) = frame.dims();
    if (h_in, w_in) == (height, width) {
        return Ok(frame.clone());
    }
    let tx = taps(method, w_in, width);
    let ty = taps(method, h_in, height);
    let mut out = vec![0.0f32; 3 * width * height];
    let mut rows = vec![0.0f64; h_in * width];
    for c in 0..3 {
        let plane = frame.plane(c);
        for y in 0..h_in {
            let src = &plane[y * w_in..(y + 1) * w_in];
            for (x, (idx, wts)) in tx.iter().enumerate() {
                rows[y * width + x] = idx.iter().zip(wts).map(|(&i, &w)| src[i] as f64 * w).sum();
            }
        }
        let dst = &mut out[c * width * height..(c + 1) * width * height];
        for (y, (idx, wts)) in ty.iter().enumerate() {
            for x in 0..width {
                let v: f64 = idx.iter().zip(wts).map(|(&i, &w)| rows[i * width + x] * w).sum();
                dst[y * width + x] = (v as f32).clamp(0.0, 1.0);
            }
        }
    }
    Frame::new(width, height, out)
}

/// Scales both sides by `factor` (`> 1` upsamples); sizes must divide evenly
/// when downsampling.
pub fn rescale(frame: &Frame, factor: f64, method: ResizeMethod) -> Result<Frame> {
    let (h, w) = frame.dims();
    let (nh, nw) = ((h as f64 * factor).round() as usize, (w as f64 * factor).round() as usize);
    if ((nh as f64 / factor) - h as f64).abs() > 1e-9 || ((nw as f64 / factor) - w as f64).abs() > 1e-9 {
        return Err(Error::Shape(format!("{w}x{h} is not divisible by scale 1/{factor}")));
    }
    resize(frame, nw, nh, method)
}

pub fn downscale(frame: &Frame, scale: usize, method: ResizeMethod) -> Result<Frame> {
    let (h, w) = frame.dims();
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::Shape(format!("{w}x{h} is not divisible by scale {scale}")));
    }
    resize(frame, w / scale, h / scale, method)
}

pub fn upscale(frame: &Frame, scale: usize, method: ResizeMethod) -> Result<Frame> {
    let (h, w) = frame.dims();
    resize(frame, w * scale, h * scale, method)
}

/// Normalized isotropic Gaussian kernel of size `2 * ceil(3 sigma) + 1`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("blur sigma {sigma} must be a finite non-negative number")));
    }
    let radius = (3.0 * sigma).ceil() as usize;
    if radius == 0 {
        return Ok(vec![1.0]);
    }
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    normalize_kernel(k)
}

pub fn normalize_kernel(k: Vec<f64>) -> Result<Vec<f64>> {
    let s: f64 = k.iter().sum();
    if s == 0.0 || !s.is_finite() {
        return Err(Error::Parameter("blur kernel cannot be normalized (zero or non-finite sum)".into()));
    }
    Ok(k.into_iter().map(|v| v / s).collect())
}

/// Separable convolution with a 1-D kernel applied along both axes,
/// reflecting at the borders.
pub fn convolve_separable(frame: &Frame, kernel: &[f64]) -> Result<Frame> {
    let kernel = normalize_kernel(kernel.to_vec())?;
    if kernel.len() == 1 {
        return Ok(frame.clone());
    }
    let r = (kernel.len() / 2) as isize;
    let (h, w) = frame.dims();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let p = 2 * (n - 1);
        let m = i.rem_euclid(p);
        (if m < n { m } else { p - m }) as usize
    };
    let mut out = frame.clone();
    let mut tmp = vec![0.0f64; h * w];
    for c in 0..3 {
        let plane = frame.plane(c);
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| plane[y * w + reflect(x as isize + k as isize - r, w)] as f64 * kv)
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| tmp[reflect(y as isize + k as isize - r, h) * w + x] * kv)
                    .sum();
                out.set(c, y, x, (v as f32).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

pub fn gaussian_blur(frame: &Frame, sigma: f64) -> Result<Frame> {
    convolve_separable(frame, &gaussian_kernel(sigma)?)
}
