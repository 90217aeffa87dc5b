//! Building blocks of the multi-scale VQGAN.

use crate::autograd::{Conv2dSpec, Graph, NodeId};
use crate::nn::{Conv2d, GroupNorm, ParamBuilder, ParamStore};
use crate::tensor::Real;

/// GroupNorm, SiLU, 3x3 conv, twice, plus an identity (or 1x1-projected)
/// skip connection.
#[derive(Clone, Debug)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize, groups: usize) -> Self {
        let mut pb = pb.pp(name);
        Self {
            norm1: GroupNorm::new(&mut pb, "norm1", cin, groups),
            conv1: Conv2d::same(&mut pb, "conv1", cin, cout, 3),
            norm2: GroupNorm::new(&mut pb, "norm2", cout, groups),
            conv2: Conv2d::same(&mut pb, "conv2", cout, cout, 3),
            skip: (cin != cout).then(|| Conv2d::same(&mut pb, "skip", cin, cout, 1)),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let mark = g.mark();
        let h = self.norm1.forward(g, ps, x);
        let h = g.silu(h);
        let h = self.conv1.forward(g, ps, h);
        let h = self.norm2.forward(g, ps, h);
        let h = g.silu(h);
        let h = self.conv2.forward(g, ps, h);
        let s = match &self.skip {
            Some(c) => c.forward(g, ps, x),
            None => x,
        };
        let out = g.add(s, h);
        g.collapse(mark, out)
    }
}

/// A run of residual blocks, the first of which may change the channel count.
#[derive(Clone, Debug)]
pub struct ResStack(Vec<ResBlock>);

impl ResStack {
    pub fn new<T: Real>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        count: usize,
        groups: usize,
    ) -> Self {
        let mut pb = pb.pp(name);
        Self(
            (0..count)
                .map(|i| ResBlock::new(&mut pb, &i.to_string(), if i == 0 { cin } else { cout }, cout, groups))
                .collect(),
        )
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, mut x: NodeId) -> NodeId {
        for b in &self.0 {
            x = b.forward(g, ps, x);
        }
        x
    }
}

/// 3x3 stride-2 convolution after zero padding one row/column at the
/// bottom/right, halving each spatial side exactly.
#[derive(Clone, Debug)]
pub struct Downsample(Conv2d);

impl Downsample {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Self {
        Self(Conv2d::new(
            pb,
            name,
            channels,
            channels,
            3,
            Conv2dSpec {
                stride: 2,
                pad: [0, 1, 0, 1],
            },
        ))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        self.0.forward(g, ps, x)
    }
}

/// 3x3 convolution to four times the target channels, then depth-to-space 2.
#[derive(Clone, Debug)]
pub struct Upsample(Conv2d);

impl Upsample {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        Self(Conv2d::same(pb, name, cin, 4 * cout, 3))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let h = self.0.forward(g, ps, x);
        g.pixel_shuffle(h, 2)
    }
}

/// Embedded-Gaussian self-attention over all spatial positions, with a
/// residual connection.
#[derive(Clone, Debug)]
pub struct NonLocal {
    norm: GroupNorm,
    q: Conv2d,
    k: Conv2d,
    v: Conv2d,
    proj: Conv2d,
    channels: usize,
}

impl NonLocal {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize, groups: usize) -> Self {
        let mut pb = pb.pp(name);
        Self {
            norm: GroupNorm::new(&mut pb, "norm", channels, groups),
            q: Conv2d::same(&mut pb, "q", channels, channels, 1),
            k: Conv2d::same(&mut pb, "k", channels, channels, 1),
            v: Conv2d::same(&mut pb, "v", channels, channels, 1),
            proj: Conv2d::same(&mut pb, "proj_out", channels, channels, 1),
            channels,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let mark = g.mark();
        let (n, c, h, w) = g.value(x).dims4();
        debug_assert_eq!(c, self.channels);
        let hn = self.norm.forward(g, ps, x);
        let q = self.q.forward(g, ps, hn);
        let k = self.k.forward(g, ps, hn);
        let v = self.v.forward(g, ps, hn);
        let q = g.reshape(q, vec![n, c, h * w]);
        let k = g.reshape(k, vec![n, c, h * w]);
        let v = g.reshape(v, vec![n, c, h * w]);
        let s = g.bmm(q, true, k, false);
        let s = g.scale(s, 1.0 / (c as f64).sqrt());
        let a = g.softmax_last(s);
        let o = g.bmm(v, false, a, true);
        let o = g.reshape(o, vec![n, c, h, w]);
        let o = self.proj.forward(g, ps, o);
        let out = g.add(x, o);
        g.collapse(mark, out)
    }
}
