//! Multi-level degradation preview grid.

use vqd_core::degrade::vq_degrade_at_level;
use vqd_core::vqgan::MsVqgan;
use vqd_core::{Error, Frame, Result};

/// Height of the label strip above each cell.
pub const LABEL_HEIGHT: usize = 9;
const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;
const MARGIN: usize = 2;

// 3x5 bitmaps, one row per entry, most significant bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];
const LETTER_K: [u8; 5] = [0b101, 0b110, 0b100, 0b110, 0b101];
const EQUALS: [u8; 5] = [0b000, 0b111, 0b000, 0b111, 0b000];

/// Parses `1,4,7` or `start:end:step` (inclusive end).
pub fn parse_k_list(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Parameter(format!("cannot parse k list {spec:?}; use 1,4,7 or start:end:step"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let ks: Vec<usize> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, b, c] = parts[..] else {
            return Err(bad());
        };
        let (a, b, c) = (num(a)?, num(b)?, num(c)?);
        if c == 0 || a > b {
            return Err(bad());
        }
        (a..=b).step_by(c).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Parameter(format!("k list {spec:?} must be non-empty with every k >= 1")));
    }
    Ok(ks)
}

pub struct PreviewGrid {
    pub image: Frame,
    pub cols: usize,
    /// Top-left corner of each cell's image area, in input order.
    pub cells: Vec<(usize, usize)>,
}

fn draw_glyph(img: &mut Frame, glyph: &[u8; 5], top: usize, left: usize) {
    let (h, w) = img.dims();
    for (r, bits) in glyph.iter().enumerate() {
        for c in 0..GLYPH_W {
            let (y, x) = (top + r, left + c);
            if bits >> (GLYPH_W - 1 - c) & 1 == 1 && y < h && x < w {
                for ch in 0..3 {
                    img.set(ch, y, x, 0.0);
                }
            }
        }
    }
}

fn draw_label(img: &mut Frame, k: usize, top: usize, left: usize) {
    let mut glyphs = vec![&LETTER_K, &EQUALS];
    glyphs.extend(k.to_string().bytes().map(|b| &DIGITS[(b - b'0') as usize]));
    for (i, g) in glyphs.into_iter().enumerate() {
        draw_glyph(img, g, top + (LABEL_HEIGHT - GLYPH_H) / 2, left + MARGIN + i * (GLYPH_W + 1));
    }
}

/// Degrades `frame` at every level in `ks` and lays the results out
/// row-major under `k=<level>` labels on a white background.
pub fn preview_grid(frame: &Frame, model: &MsVqgan<f32>, ks: &[usize], cols: Option<usize>) -> Result<PreviewGrid> {
    if ks.is_empty() {
        return Err(Error::Parameter("k list is empty".into()));
    }
    let cols = cols
        .unwrap_or_else(|| (ks.len() as f64).sqrt().ceil() as usize)
        .clamp(1, ks.len());
    let rows = ks.len().div_ceil(cols);
    let (h, w) = frame.dims();
    let cell_h = h + LABEL_HEIGHT;
    let mut image = Frame::filled(cols * w, rows * cell_h, [1.0; 3]);
    let mut cells = Vec::with_capacity(ks.len());
    for (i, &k) in ks.iter().enumerate() {
        let out = vq_degrade_at_level(frame, model, k)?;
        let (top, left) = ((i / cols) * cell_h, (i % cols) * w);
        draw_label(&mut image, k, top, left);
        let origin = (top + LABEL_HEIGHT, left);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    image.set(c, origin.0 + y, origin.1 + x, out.get(c, y, x));
                }
            }
        }
        cells.push(origin);
    }
    Ok(PreviewGrid { image, cols, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_lists() {
        assert_eq!(parse_k_list("1").unwrap(), vec![1]);
        assert_eq!(parse_k_list("1,4, 7").unwrap(), vec![1, 4, 7]);
        let sweep = parse_k_list("1:70:3").unwrap();
        assert_eq!(sweep.len(), 24);
        assert_eq!((sweep[0], sweep[23]), (1, 70));
        for bad in ["", "0", "1:5", "5:1:1", "1:5:0", "a"] {
            assert!(parse_k_list(bad).is_err(), "{bad}");
        }
    }
}
