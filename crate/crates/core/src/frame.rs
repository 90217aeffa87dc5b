//! RGB frames in `[0, 1]`, clips, and 8-bit PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// An `H x W x 3` image with values in `[0, 1]`, stored channel-planar.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Shape(format!(
                "frame {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for v in rgb {
            data.extend(std::iter::repeat(v).take(width * height));
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(height, width)`
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn clamp01(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn mean_abs_diff(&self, other: &Frame) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum::<f64>()
            / self.data.len().max(1) as f64)
    }

    pub fn check_same(&self, other: &Frame) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "frame sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width}@({top},{left}) exceeds frame {}x{}",
                self.height, self.width
            )));
        }
        Ok(Frame::from_fn(width, height, |c, y, x| self.get(c, top + y, left + x)))
    }

    /// Reflect-pads bottom/right so both sides become multiples of `m`.
    pub fn pad_reflect_to_multiple(&self, m: usize) -> Frame {
        let h = self.height.div_ceil(m) * m;
        let w = self.width.div_ceil(m) * m;
        if (h, w) == self.dims() {
            return self.clone();
        }
        let reflect = |i: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let r = i % period;
            if r < n {
                r
            } else {
                period - r
            }
        };
        Frame::from_fn(w, h, |c, y, x| self.get(c, reflect(y, self.height), reflect(x, self.width)))
    }

    /// `[1, 3, H, W]` with values mapped by `f`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            vec![1, 3, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
    }

    /// Image `n` of an NCHW batch with three channels, clamped to `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Frame> {
        let (bn, c, h, w) = t.dims4();
        if c != 3 || n >= bn {
            return Err(Error::Shape(format!("cannot take RGB frame {n} from {:?}", t.shape())));
        }
        let sz = 3 * h * w;
        Frame::new(
            w,
            h,
            t.data()[n * sz..(n + 1) * sz]
                .iter()
                .map(|v| (v.to_f64() as f32).clamp(0.0, 1.0))
                .collect(),
        )
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                out.push(quantize_u8(self.data[c * n + i]));
            }
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Frame> {
        if rgb.len() != 3 * width * height {
            return Err(Error::Shape(format!(
                "rgb buffer of {} bytes for {width}x{height}",
                rgb.len()
            )));
        }
        let n = width * height;
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[c * n + i] = rgb[3 * i + c] as f32 / 255.0;
            }
        }
        Frame::new(width, height, data)
    }

    /// Round-trips the frame through 8-bit storage.
    pub fn quantized_8bit(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| quantize_u8(v) as f32 / 255.0).collect(),
        }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Frame> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Frame::from_rgb8(w as usize, h as usize, img.as_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// An ordered sequence of equally sized frames.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Clip {
    pub frames: Vec<Frame>,
}

impl Clip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for (i, f) in frames.iter().enumerate() {
                if f.dims() != first.dims() {
                    return Err(Error::Shape(format!(
                        "frame {i} is {}x{}, expected {}x{}",
                        f.width(),
                        f.height(),
                        first.width(),
                        first.height()
                    )));
                }
            }
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` of the frames, if any.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::dims)
    }
}
