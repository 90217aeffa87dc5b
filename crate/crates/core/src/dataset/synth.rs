//! Synthetic anime-like clips: flat-color polygons with dark outlines moving
//! slowly over a flat background.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub clips: usize,
    /// Frame side in pixels; must be divisible by 32.
    pub size: usize,
    pub frames_per_clip: usize,
    /// Fill colors per clip, background included.
    pub palette_size: usize,
    pub shapes: usize,
    /// Outline half-width in pixels.
    pub outline: f64,
    /// Largest per-frame translation in pixels.
    pub max_speed: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clips: 8,
            size: 64,
            frames_per_clip: 8,
            palette_size: 6,
            shapes: 4,
            outline: 0.75,
            max_speed: 1.0,
        }
    }
}

/// Outline color, shared by every clip.
pub const OUTLINE_RGB: [u8; 3] = [24, 16, 28];

struct Shape {
    center: (f64, f64),
    radii: Vec<f64>,
    angle0: f64,
    color: [u8; 3],
    velocity: (f64, f64),
    spin: f64,
}

impl Shape {
    fn vertices(&self, t: f64) -> Vec<(f64, f64)> {
        let n = self.radii.len();
        let (cx, cy) = (self.center.0 + self.velocity.0 * t, self.center.1 + self.velocity.1 * t);
        let a0 = self.angle0 + self.spin * t;
        self.radii
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let a = a0 + std::f64::consts::TAU * i as f64 / n as f64;
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect()
    }
}

fn inside(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
    let mut c = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > p.1) != (yj > p.1) && p.0 < (xj - xi) * (p.1 - yi) / (yj - yi) + xi {
            c = !c;
        }
        j = i;
    }
    c
}

fn edge_distance(poly: &[(f64, f64)], p: (f64, f64)) -> f64 {
    let mut best = f64::INFINITY;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (ax, ay) = poly[j];
        let (bx, by) = poly[i];
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (qx, qy) = (ax + t * dx - p.0, ay + t * dy - p.1);
        best = best.min((qx * qx + qy * qy).sqrt());
        j = i;
    }
    best
}

fn random_color(rng: &mut impl Rng) -> [u8; 3] {
    // Bright-ish fills so they never collide with the outline color.
    [rng.gen_range(64..=255), rng.gen_range(64..=255), rng.gen_range(64..=255)]
}

fn render(size: usize, background: [u8; 3], shapes: &[Shape], t: f64, outline: f64) -> Frame {
    let polys: Vec<Vec<(f64, f64)>> = shapes.iter().map(|s| s.vertices(t)).collect();
    let mut rgb = vec![0u8; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let mut color = background;
            // Later shapes are drawn on top.
            for (poly, s) in polys.iter().zip(shapes).rev() {
                let d = edge_distance(poly, p);
                if d <= outline {
                    color = OUTLINE_RGB;
                    break;
                }
                if inside(poly, p) {
                    color = s.color;
                    break;
                }
            }
            rgb[3 * (y * size + x)..3 * (y * size + x) + 3].copy_from_slice(&color);
        }
    }
    Frame::from_rgb8(size, size, &rgb).expect("buffer sized for frame")
}

/// Generates `cfg.clips` clips in memory; deterministic for a given stream.
pub fn synth_clips(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Vec<Clip>> {
    if cfg.size == 0 || cfg.size % 32 != 0 {
        return Err(Error::Parameter(format!("synthetic frame size {} must be a positive multiple of 32", cfg.size)));
    }
    if cfg.palette_size < 2 || cfg.frames_per_clip == 0 || cfg.shapes == 0 {
        return Err(Error::Parameter(
            "palette needs at least 2 colors and clips at least one frame and shape".into(),
        ));
    }
    if !(cfg.outline >= 0.0) || !(cfg.max_speed >= 0.0) {
        return Err(Error::Parameter("outline width and speed must be non-negative".into()));
    }
    let s = cfg.size as f64;
    (0..cfg.clips)
        .map(|_| {
            let palette: Vec<[u8; 3]> = (0..cfg.palette_size).map(|_| random_color(rng)).collect();
            let background = palette[0];
            let shapes: Vec<Shape> = (0..cfg.shapes)
                .map(|_| {
                    let verts = rng.gen_range(3..=6);
                    let r = rng.gen_range(0.12..0.3) * s;
                    Shape {
                        center: (rng.gen_range(0.15..0.85) * s, rng.gen_range(0.15..0.85) * s),
                        radii: (0..verts).map(|_| r * rng.gen_range(0.7..1.0)).collect(),
                        angle0: rng.gen_range(0.0..std::f64::consts::TAU),
                        color: palette[rng.gen_range(1..cfg.palette_size)],
                        velocity: (
                            rng.gen_range(-cfg.max_speed..=cfg.max_speed),
                            rng.gen_range(-cfg.max_speed..=cfg.max_speed),
                        ),
                        spin: rng.gen_range(-0.03..=0.03),
                    }
                })
                .collect();
            Clip::new(
                (0..cfg.frames_per_clip)
                    .map(|t| render(cfg.size, background, &shapes, t as f64, cfg.outline))
                    .collect(),
            )
        })
        .collect()
}
