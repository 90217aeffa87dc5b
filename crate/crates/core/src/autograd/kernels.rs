//! Forward and backward kernels on raw NCHW buffers.

use crate::tensor::{gemm, Real, Tensor};

/// Stride and explicit `[top, bottom, left, right]` zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: [usize; 4],
}

impl Conv2dSpec {
    /// Stride 1 with symmetric `k / 2` padding.
    pub fn same(k: usize) -> Self {
        let p = k / 2;
        Self {
            stride: 1,
            pad: [p, p, p, p],
        }
    }

    pub fn new(stride: usize, pad: usize) -> Self {
        Self {
            stride,
            pad: [pad; 4],
        }
    }

    pub fn out_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
        let hp = h + self.pad[0] + self.pad[1];
        let wp = w + self.pad[2] + self.pad[3];
        assert!(
            hp >= kh && wp >= kw,
            "convolution kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        );
        ((hp - kh) / self.stride + 1, (wp - kw) / self.stride + 1)
    }

    fn is_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == 1 && self.pad == [0; 4]
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: &Conv2dSpec,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let s = spec.stride;
    let (pt, pl) = (spec.pad[0] as isize, spec.pad[2] as isize);
    let hw_out = ho * wo;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * s) as isize + ky as isize - pt;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::ZERO);
                        continue;
                    }
                    let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - pl;
                        *d = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            xrow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: &Conv2dSpec,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let s = spec.stride;
    let (pt, pl) = (spec.pad[0] as isize, spec.pad[2] as isize);
    let hw_out = ho * wo;
    for ci in 0..c {
        let xc = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * s) as isize + ky as isize - pt;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &mut xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - pl;
                        if ix >= 0 && ix < w as isize {
                            xrow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Tensor<T> {
    let (n, ci, h, wd) = x.dims4();
    let (co, wci, kh, kw) = w.dims4();
    assert_eq!(ci, wci, "conv2d: input has {ci} channels, kernel expects {wci}");
    let (ho, wo) = spec.out_hw(h, wd, kh, kw);
    let kdim = ci * kh * kw;
    let hw_out = ho * wo;
    let mut out = Tensor::zeros(vec![n, co, ho, wo]);
    let pointwise = spec.is_pointwise(kh, kw);
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::ZERO; kdim * hw_out]
    };
    for bi in 0..n {
        let xs = &x.data()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
        let rhs: &[T] = if pointwise {
            xs
        } else {
            im2col(xs, ci, h, wd, kh, kw, spec, ho, wo, &mut cols);
            &cols
        };
        let os = &mut out.data_mut()[bi * co * hw_out..(bi + 1) * co * hw_out];
        gemm(false, false, co, hw_out, kdim, T::ONE, w.data(), rhs, T::ZERO, os);
        if let Some(b) = b {
            for (oc, &bv) in b.data().iter().enumerate() {
                for v in os[oc * hw_out..(oc + 1) * hw_out].iter_mut() {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_w, grad_b)`; each is computed only when requested.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &Conv2dSpec,
    gy: &Tensor<T>,
    need: (bool, bool, bool),
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let (n, ci, h, wd) = x.dims4();
    let (co, _, kh, kw) = w.dims4();
    let (_, _, ho, wo) = gy.dims4();
    let kdim = ci * kh * kw;
    let hw_out = ho * wo;
    let pointwise = spec.is_pointwise(kh, kw);
    let mut gx = need.0.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut gw = need.1.then(|| Tensor::zeros(w.shape().to_vec()));
    let mut gb = need.2.then(|| Tensor::zeros(vec![co]));
    let mut cols = vec![T::ZERO; if pointwise { 0 } else { kdim * hw_out }];
    let mut gcols = vec![T::ZERO; if need.0 && !pointwise { kdim * hw_out } else { 0 }];
    for bi in 0..n {
        let xs = &x.data()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
        let gys = &gy.data()[bi * co * hw_out..(bi + 1) * co * hw_out];
        if let Some(gw) = gw.as_mut() {
            let rhs: &[T] = if pointwise {
                xs
            } else {
                im2col(xs, ci, h, wd, kh, kw, spec, ho, wo, &mut cols);
                &cols
            };
            // gw[co, k] += gy[co, p] * cols[k, p]
            gemm(false, true, co, kdim, hw_out, T::ONE, gys, rhs, T::ONE, gw.data_mut());
        }
        if let Some(gb) = gb.as_mut() {
            for (oc, g) in gb.data_mut().iter_mut().enumerate() {
                *g += gys[oc * hw_out..(oc + 1) * hw_out].iter().copied().sum::<T>();
            }
        }
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx.data_mut()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
            if pointwise {
                gemm(true, false, kdim, hw_out, co, T::ONE, w.data(), gys, T::ONE, gxs);
            } else {
                gemm(true, false, kdim, hw_out, co, T::ONE, w.data(), gys, T::ZERO, &mut gcols);
                col2im(&gcols, ci, h, wd, kh, kw, spec, ho, wo, gxs);
            }
        }
    }
    (gx, gw, gb)
}

/// Per-(sample, group) statistics saved by the group-norm forward pass.
#[derive(Clone, Debug)]
pub struct GroupNormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn group_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
    eps: f64,
) -> (Tensor<T>, GroupNormStats<T>) {
    let (n, c, h, w) = x.dims4();
    assert!(groups > 0 && c % groups == 0, "group_norm: {c} channels not divisible into {groups} groups");
    let cpg = c / groups;
    let gsize = cpg * h * w;
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut mean = Vec::with_capacity(n * groups);
    let mut rstd = Vec::with_capacity(n * groups);
    for bi in 0..n {
        for g in 0..groups {
            let off = (bi * c + g * cpg) * hw;
            let xs = &x.data()[off..off + gsize];
            let m = xs.iter().map(|v| v.to_f64()).sum::<f64>() / gsize as f64;
            let var = xs.iter().map(|v| (v.to_f64() - m).powi(2)).sum::<f64>() / gsize as f64;
            let r = 1.0 / (var + eps).sqrt();
            let (mt, rt) = (T::from_f64(m), T::from_f64(r));
            mean.push(mt);
            rstd.push(rt);
            let os = &mut out.data_mut()[off..off + gsize];
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
                for i in cc * hw..(cc + 1) * hw {
                    os[i] = (xs[i] - mt) * rt * ga + be;
                }
            }
        }
    }
    (out, GroupNormStats { mean, rstd })
}

pub fn group_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &GroupNormStats<T>,
    groups: usize,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.dims4();
    let cpg = c / groups;
    let hw = h * w;
    let gsize = cpg * hw;
    let mut gx = Tensor::zeros(x.shape().to_vec());
    let mut ggamma = vec![0.0f64; c];
    let mut gbeta = vec![0.0f64; c];
    for bi in 0..n {
        for g in 0..groups {
            let si = bi * groups + g;
            let (m, r) = (stats.mean[si].to_f64(), stats.rstd[si].to_f64());
            let off = (bi * c + g * cpg) * hw;
            let xs = &x.data()[off..off + gsize];
            let gys = &gy.data()[off..off + gsize];
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let ga = gamma.data()[ch].to_f64();
                for i in cc * hw..(cc + 1) * hw {
                    let xhat = (xs[i].to_f64() - m) * r;
                    let gyv = gys[i].to_f64();
                    ggamma[ch] += gyv * xhat;
                    gbeta[ch] += gyv;
                    let d = gyv * ga;
                    sum_dxhat += d;
                    sum_dxhat_xhat += d * xhat;
                }
            }
            let inv = 1.0 / gsize as f64;
            let gxs = &mut gx.data_mut()[off..off + gsize];
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let ga = gamma.data()[ch].to_f64();
                for i in cc * hw..(cc + 1) * hw {
                    let xhat = (xs[i].to_f64() - m) * r;
                    let d = gys[i].to_f64() * ga;
                    gxs[i] = T::from_f64(r * (d - inv * sum_dxhat - xhat * inv * sum_dxhat_xhat));
                }
            }
        }
    }
    let to_t = |v: Vec<f64>| Tensor::new(vec![c], v.into_iter().map(T::from_f64).collect());
    (gx, to_t(ggamma), to_t(gbeta))
}

/// Depth-to-space: `[n, c*r*r, h, w] -> [n, c, h*r, w*r]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let (n, c_in, h, w) = x.dims4();
    assert_eq!(c_in % (r * r), 0, "pixel_shuffle: channels {c_in} not divisible by {}", r * r);
    let c = c_in / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = Tensor::zeros(vec![n, c, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..n {
        for oc in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = oc * r * r + dy * r + dx;
                    let src = &xd[(bi * c_in + ic) * h * w..(bi * c_in + ic + 1) * h * w];
                    let dst_base = (bi * c + oc) * ho * wo;
                    for y in 0..h {
                        let row = dst_base + (y * r + dy) * wo + dx;
                        for xx in 0..w {
                            od[row + xx * r] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Space-to-depth, the exact inverse (and adjoint) of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let (n, c, ho, wo) = x.dims4();
    assert!(ho % r == 0 && wo % r == 0, "pixel_unshuffle: {ho}x{wo} not divisible by {r}");
    let (h, w) = (ho / r, wo / r);
    let c_out = c * r * r;
    let mut out = Tensor::zeros(vec![n, c_out, h, w]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..n {
        for ic in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let oc = ic * r * r + dy * r + dx;
                    let dst = &mut od[(bi * c_out + oc) * h * w..(bi * c_out + oc + 1) * h * w];
                    let src_base = (bi * c + ic) * ho * wo;
                    for y in 0..h {
                        let row = src_base + (y * r + dy) * wo + dx;
                        for xx in 0..w {
                            dst[y * w + xx] = xd[row + xx * r];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels<T: Real>(xs: &[&Tensor<T>]) -> Tensor<T> {
    let (n, _, h, w) = xs[0].dims4();
    let mut ctot = 0;
    for x in xs {
        let (ni, ci, hi, wi) = x.dims4();
        assert_eq!((ni, hi, wi), (n, h, w), "concat_channels: mismatched shapes");
        ctot += ci;
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * ctot * hw);
    for bi in 0..n {
        for x in xs {
            let ci = x.shape()[1];
            data.extend_from_slice(&x.data()[bi * ci * hw..(bi + 1) * ci * hw]);
        }
    }
    Tensor::new(vec![n, ctot, h, w], data)
}

/// Channel range `[start, start + len)` of an NCHW tensor.
pub fn slice_channels<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert!(start + len <= c, "slice_channels out of range");
    let hw = h * w;
    let mut data = Vec::with_capacity(n * len * hw);
    for bi in 0..n {
        data.extend_from_slice(&x.data()[(bi * c + start) * hw..(bi * c + start + len) * hw]);
    }
    Tensor::new(vec![n, len, h, w], data)
}

/// Softmax over the last axis.
pub fn softmax_last<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().expect("softmax of a rank-0 tensor");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let m = row.iter().copied().fold(row[0], T::max);
        let mut s = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Batched matmul over rank-3 tensors with optional transposes of each operand.
pub fn bmm<T: Real>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Tensor<T> {
    let (ba, a1, a2) = dims3(a);
    let (bb, b1, b2) = dims3(b);
    assert_eq!(ba, bb, "bmm: batch mismatch");
    let (m, k) = if ta { (a2, a1) } else { (a1, a2) };
    let (k2, n) = if tb { (b2, b1) } else { (b1, b2) };
    assert_eq!(k, k2, "bmm: inner dimension mismatch ({k} vs {k2})");
    let mut out = Tensor::zeros(vec![ba, m, n]);
    for i in 0..ba {
        gemm(
            ta,
            tb,
            m,
            n,
            k,
            T::ONE,
            &a.data()[i * a1 * a2..(i + 1) * a1 * a2],
            &b.data()[i * b1 * b2..(i + 1) * b1 * b2],
            T::ZERO,
            &mut out.data_mut()[i * m * n..(i + 1) * m * n],
        );
    }
    out
}

pub fn dims3<T: Real>(t: &Tensor<T>) -> (usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 3, "expected rank-3 tensor, got {s:?}");
    (s[0], s[1], s[2])
}
