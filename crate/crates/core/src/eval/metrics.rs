//! Paired metrics. Both are computed on the 8-bit values a frame would be
//! stored as, so results match what is measured on saved PNGs.

use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};

/// Returned by [`psnr`] for identical inputs.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// PSNR in dB of two 8-bit buffers, peak 255. `cap` is returned when they
/// are identical.
pub fn psnr_u8(a: &[u8], b: &[u8], cap: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("cannot compare {} and {} samples", a.len(), b.len())));
    }
    let sse: u64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(cap);
    }
    let mse = sse as f64 / a.len() as f64;
    Ok(20.0 * (255.0 / mse.sqrt()).log10())
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same(b)?;
    psnr_u8(&a.to_rgb8(), &b.to_rgb8(), PSNR_CAP)
}

/// Luma on the 0..255 scale.
fn luma(f: &Frame) -> Vec<f64> {
    let rgb = f.to_rgb8();
    rgb.chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filter.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for ox in 0..ow {
            tmp[y * ow + ox] = (0..n).map(|i| k[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..n).map(|i| k[i] * tmp[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean SSIM over the valid region of the luma channel, 11x11 Gaussian
/// window with sigma 1.5.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same(b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let (x, y) = (luma(a), luma(b));
    let k = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(&x, w, h, &k);
    let my = filter_valid(&y, w, h, &k);
    let sxx = filter_valid(&xx, w, h, &k);
    let syy = filter_valid(&yy, w, h, &k);
    let sxy = filter_valid(&xy, w, h, &k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ma, mb) = (mx[i], my[i]);
        let va = sxx[i] - ma * ma;
        let vb = syy[i] - mb * mb;
        let cov = sxy[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / mx.len() as f64)
}

/// Frame-averaged metric over two aligned clips.
pub fn clip_mean(a: &Clip, b: &Clip, metric: impl Fn(&Frame, &Frame) -> Result<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("clips have {} and {} frames", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("cannot score an empty clip".into()));
    }
    let mut s = 0.0;
    for (x, y) in a.frames.iter().zip(&b.frames) {
        s += metric(x, y)?;
    }
    Ok(s / a.len() as f64)
}
