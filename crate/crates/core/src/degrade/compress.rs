//! Lossy compression stage. The built-in backend is a JPEG-style 8x8
//! block-DCT quantizer in YCbCr; the external backend round-trips the clip
//! through an `ffmpeg` H.264 encode.

use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompressMethod {
    #[default]
    BuiltinDct,
    External,
    /// External when an encoder is on `PATH`, built-in otherwise.
    Auto,
}

pub const QUALITY_RANGE: std::ops::RangeInclusive<u8> = 1..=100;

const LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51,
    87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99,
];

/// Base table scaled the way the IJG encoder does it.
pub fn quant_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as u32;
    let s = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * s + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    m
}

fn check_quality(quality: u8) -> Result<()> {
    if !QUALITY_RANGE.contains(&quality) {
        return Err(Error::Parameter(format!("quality {quality} outside {QUALITY_RANGE:?}")));
    }
    Ok(())
}

/// Encodes and decodes one frame; the result is 8-bit quantized.
pub fn dct_compress_frame(frame: &Frame, quality: u8) -> Result<Frame> {
    check_quality(quality)?;
    let (h, w) = frame.dims();
    let hp = h.div_ceil(8) * 8;
    let wp = w.div_ceil(8) * 8;
    let basis = dct_basis();
    let tables = [quant_table(&LUMA, quality), quant_table(&CHROMA, quality), quant_table(&CHROMA, quality)];

    // Edge-replicated YCbCr planes on the 0..255 scale, level-shifted by 128.
    let mut planes = vec![vec![0.0f64; hp * wp]; 3];
    for y in 0..hp {
        for x in 0..wp {
            let (sy, sx) = (y.min(h - 1), x.min(w - 1));
            let r = (frame.get(0, sy, sx).clamp(0.0, 1.0) * 255.0).round() as f64;
            let g = (frame.get(1, sy, sx).clamp(0.0, 1.0) * 255.0).round() as f64;
            let b = (frame.get(2, sy, sx).clamp(0.0, 1.0) * 255.0).round() as f64;
            let i = y * wp + x;
            planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
            planes[1][i] = -0.168736 * r - 0.331264 * g + 0.5 * b;
            planes[2][i] = 0.5 * r - 0.418688 * g - 0.081312 * b;
        }
    }

    let mut block = [[0.0f64; 8]; 8];
    let mut tmp = [[0.0f64; 8]; 8];
    for (plane, table) in planes.iter_mut().zip(&tables) {
        for by in (0..hp).step_by(8) {
            for bx in (0..wp).step_by(8) {
                for (y, row) in block.iter_mut().enumerate() {
                    for (x, v) in row.iter_mut().enumerate() {
                        *v = plane[(by + y) * wp + bx + x];
                    }
                }
                // Forward: C B C^T.
                for u in 0..8 {
                    for x in 0..8 {
                        tmp[u][x] = (0..8).map(|y| basis[u][y] * block[y][x]).sum();
                    }
                }
                for u in 0..8 {
                    for v in 0..8 {
                        let c: f64 = (0..8).map(|x| tmp[u][x] * basis[v][x]).sum();
                        let q = table[u * 8 + v];
                        block[u][v] = (c / q).round() * q;
                    }
                }
                // Inverse: C^T D C.
                for y in 0..8 {
                    for v in 0..8 {
                        tmp[y][v] = (0..8).map(|u| basis[u][y] * block[u][v]).sum();
                    }
                }
                for y in 0..8 {
                    for x in 0..8 {
                        plane[(by + y) * wp + bx + x] = (0..8).map(|v| tmp[y][v] * basis[v][x]).sum();
                    }
                }
            }
        }
    }

    let mut out = Frame::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let i = y * wp + x;
            let (yy, cb, cr) = (planes[0][i] + 128.0, planes[1][i], planes[2][i]);
            let rgb = [yy + 1.402 * cr, yy - 0.344136 * cb - 0.714136 * cr, yy + 1.772 * cb];
            for (c, v) in rgb.into_iter().enumerate() {
                out.set(c, y, x, (v.round().clamp(0.0, 255.0) / 255.0) as f32);
            }
        }
    }
    Ok(out)
}

pub fn encoder_available() -> bool {
    Command::new("ffmpeg")
        .arg("-version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Constant rate factor for a quality in `1..=100`: 100 maps to 0, 1 to 51.
pub fn crf_for_quality(quality: u8) -> u32 {
    ((100 - quality.clamp(1, 100) as u32) * 51 + 49) / 99
}

fn external_compress(clip: &Clip, quality: u8) -> Result<Clip> {
    if !encoder_available() {
        return Err(Error::Environment(
            "ffmpeg not found on PATH; use the builtin-dct compression backend instead".into(),
        ));
    }
    let Some((h, w)) = clip.dims() else {
        return Ok(clip.clone());
    };
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    // yuv420p needs even sizes; pad by replication and crop back.
    let padded: Vec<Frame> = clip
        .frames
        .iter()
        .map(|f| Frame::from_fn(w + w % 2, h + h % 2, |c, y, x| f.get(c, y.min(h - 1), x.min(w - 1))))
        .collect();
    for (t, f) in padded.iter().enumerate() {
        f.save_png(dir.path().join(format!("in{t:05}.png")))?;
    }
    let video = dir.path().join("clip.mp4");
    run_ffmpeg(&[
        "-loglevel", "error", "-y", "-framerate", "24", "-i",
        &path_str(&dir.path().join("in%05d.png")),
        "-c:v", "libx264", "-crf", &crf_for_quality(quality).to_string(), "-pix_fmt", "yuv420p",
        &path_str(&video),
    ])?;
    run_ffmpeg(&[
        "-loglevel", "error", "-y", "-i", &path_str(&video),
        &path_str(&dir.path().join("out%05d.png")),
    ])?;
    let frames = (0..clip.len())
        .map(|t| {
            let f = Frame::load_png(dir.path().join(format!("out{:05}.png", t + 1)))?;
            f.crop(0, 0, h, w)
        })
        .collect::<Result<Vec<_>>>()?;
    Clip::new(frames)
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn run_ffmpeg(args: &[&str]) -> Result<()> {
    let out = Command::new("ffmpeg")
        .args(args)
        .output()
        .map_err(|e| Error::Environment(format!("failed to run ffmpeg: {e}")))?;
    if !out.status.success() {
        return Err(Error::Environment(format!(
            "ffmpeg exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(())
}

/// Compresses and decodes every frame of `clip`.
pub fn compress(clip: &Clip, quality: u8, method: CompressMethod) -> Result<Clip> {
    check_quality(quality)?;
    match method {
        CompressMethod::BuiltinDct => Clip::new(
            clip.frames
                .iter()
                .map(|f| dct_compress_frame(f, quality))
                .collect::<Result<Vec<_>>>()?,
        ),
        CompressMethod::External => external_compress(clip, quality),
        CompressMethod::Auto if encoder_available() => external_compress(clip, quality),
        CompressMethod::Auto => compress(clip, quality, CompressMethod::BuiltinDct),
    }
}
