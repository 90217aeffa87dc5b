//! Unidirectional recurrent x4 network. Each step sees the previous,
//! current and next LR frames plus a hidden state; it never sees an earlier
//! SR output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::VsrConfig;
use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};
use crate::nn::{check_same_layout, Conv2d, ParamBuilder, ParamStore};
use crate::resample::{upscale, ResizeMethod};
use crate::tensor::{Real, Tensor};

pub const PREFIX: &str = "vsr";

/// Hidden features carried between steps, at LR resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub features: Tensor<f32>,
}

impl RecurrentState {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            features: Tensor::zeros(vec![batch, channels, height, width]),
        }
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        let (_, _, h, w) = self.features.dims4();
        (h, w)
    }
}

#[derive(Clone, Debug)]
struct Arch {
    conv_in: Conv2d,
    body: Vec<(Conv2d, Conv2d)>,
    state_out: Conv2d,
    up: [Conv2d; 2],
    out: Conv2d,
}

#[derive(Clone, Debug)]
pub struct VsrNet {
    cfg: VsrConfig,
    arch: Arch,
    pub params: ParamStore<f32>,
}

/// Nodes of one recurrent step.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    /// Unclamped SR output.
    pub sr: NodeId,
    pub state: NodeId,
    pub residual: NodeId,
}

fn build<T: Real>(cfg: &VsrConfig, ps: &mut ParamStore<T>, seed: u64) -> Arch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut root = ParamBuilder::new(ps, &mut rng);
    let mut pb = root.pp(PREFIX);
    let (c, s) = (cfg.channels, cfg.state_channels);
    let conv_in = Conv2d::same(&mut pb, "conv_in", 9 + s, c, 3);
    let body = (0..cfg.res_blocks)
        .map(|i| {
            (
                Conv2d::same(&mut pb, &format!("body.{i}.conv1"), c, c, 3),
                Conv2d::same(&mut pb, &format!("body.{i}.conv2"), c, c, 3),
            )
        })
        .collect();
    let state_out = Conv2d::same(&mut pb, "state_out", c, s, 3);
    let up = [
        Conv2d::same(&mut pb, "up.0", c, 4 * c, 3),
        Conv2d::same(&mut pb, "up.1", c, 4 * c, 3),
    ];
    // Zero so that a fresh network starts as plain bicubic upsampling.
    let out = Conv2d::zeros(&mut pb, "out", c, 3, 3, crate::autograd::Conv2dSpec::same(3));
    Arch {
        conv_in,
        body,
        state_out,
        up,
        out,
    }
}

/// Bicubic x4 of an NCHW batch, per image.
pub fn bicubic_x4(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (n, _, _, _) = x.dims4();
    let items = (0..n)
        .map(|i| Ok(upscale(&Frame::from_tensor(x, i)?, super::config::SCALE, ResizeMethod::Bicubic)?.to_tensor()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack_batch(&items))
}

impl VsrNet {
    pub fn new(cfg: VsrConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let arch = build(&cfg, &mut params, seed);
        Ok(Self { cfg, arch, params })
    }

    pub fn from_params(cfg: VsrConfig, params: ParamStore<f32>) -> Result<Self> {
        let mut n = Self::new(cfg, 0)?;
        check_same_layout(&n.params, &params, "VSR network")?;
        n.params = params;
        Ok(n)
    }

    pub fn config(&self) -> &VsrConfig {
        &self.cfg
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Sets every parameter of the SR output head to zero.
    pub fn zero_residual_head(&mut self) {
        for name in [self.arch.out.weight_name().to_string(), self.arch.out.bias_name().to_string()] {
            let t = self.params.get_mut(&name).expect("head parameter");
            t.data_mut().fill(0.0);
        }
    }

    /// One step. `base` is the bicubic x4 of `cur`, supplied as a constant.
    pub fn step_nodes(
        &self,
        g: &mut Graph<f32>,
        prev: NodeId,
        cur: NodeId,
        next: NodeId,
        state: NodeId,
        base: NodeId,
    ) -> StepNodes {
        let a = &self.arch;
        let ps = &self.params;
        let x = g.concat_channels(&[prev, cur, next, state]);
        let h = a.conv_in.forward(g, ps, x);
        let mut h = g.leaky_relu(h, 0.1);
        for (c1, c2) in &a.body {
            let r = c1.forward(g, ps, h);
            let r = g.relu(r);
            let r = c2.forward(g, ps, r);
            h = g.add(h, r);
        }
        let st = a.state_out.forward(g, ps, h);
        let state = g.leaky_relu(st, 0.1);
        let mut u = h;
        for conv in &a.up {
            let t = conv.forward(g, ps, u);
            let t = g.pixel_shuffle(t, 2);
            u = g.leaky_relu(t, 0.1);
        }
        let residual = a.out.forward(g, ps, u);
        let sr = g.add(base, residual);
        StepNodes { sr, state, residual }
    }

    fn check_inputs(&self, prev: &Tensor<f32>, cur: &Tensor<f32>, next: &Tensor<f32>, state: &RecurrentState) -> Result<()> {
        let (n, c, h, w) = cur.dims4();
        if c != 3 {
            return Err(Error::Shape(format!("LR frames need 3 channels, got {c}")));
        }
        if prev.shape() != cur.shape() || next.shape() != cur.shape() {
            return Err(Error::Shape(format!(
                "prev {:?}, cur {:?} and next {:?} must share one shape",
                prev.shape(),
                cur.shape(),
                next.shape()
            )));
        }
        let want = [n, self.cfg.state_channels, h, w];
        if state.features.shape() != want {
            return Err(Error::Shape(format!(
                "state {:?} does not match frames (expected {want:?})",
                state.features.shape()
            )));
        }
        Ok(())
    }

    /// One step on NCHW batches; returns the clamped SR batch and the new
    /// state.
    pub fn sr_step_tensor(
        &self,
        prev: &Tensor<f32>,
        cur: &Tensor<f32>,
        next: &Tensor<f32>,
        state: &RecurrentState,
    ) -> Result<(Tensor<f32>, RecurrentState)> {
        self.check_inputs(prev, cur, next, state)?;
        let mut g = Graph::no_grad();
        let base = g.constant(bicubic_x4(cur)?);
        let p = g.constant(prev.clone());
        let c = g.constant(cur.clone());
        let nx = g.constant(next.clone());
        let s = g.constant(state.features.clone());
        let out = self.step_nodes(&mut g, p, c, nx, s, base);
        let sr = g.value(out.sr).map(|v| v.clamp(0.0, 1.0));
        Ok((
            sr,
            RecurrentState {
                features: g.value(out.state).clone(),
            },
        ))
    }

    pub fn sr_step(&self, prev: &Frame, cur: &Frame, next: &Frame, state: &RecurrentState) -> Result<(Frame, RecurrentState)> {
        let (sr, st) = self.sr_step_tensor(&prev.to_tensor(), &cur.to_tensor(), &next.to_tensor(), state)?;
        Ok((Frame::from_tensor(&sr, 0)?, st))
    }

    pub fn initial_state(&self, frame: &Frame) -> RecurrentState {
        let (h, w) = frame.dims();
        RecurrentState::zeros(1, self.cfg.state_channels, h, w)
    }

    /// Upscales a clip frame by frame with the carried state; the first and
    /// last frames stand in for their missing neighbours.
    pub fn sr_clip(&self, clip: &Clip) -> Result<Clip> {
        if clip.is_empty() {
            return Err(Error::Empty("cannot upscale an empty clip".into()));
        }
        let mut s = SrStream::new(self);
        let mut out = Vec::with_capacity(clip.len());
        for f in &clip.frames {
            if let Some(sr) = s.push(f.clone())? {
                out.push(sr);
            }
        }
        out.extend(s.finish()?);
        Clip::new(out)
    }

    /// Unrolls the network over `T` time steps of NCHW batches in one graph;
    /// returns the unclamped SR node of every step.
    pub fn unroll_nodes(&self, g: &mut Graph<f32>, lr: &[Tensor<f32>]) -> Result<Vec<NodeId>> {
        let t_len = lr.len();
        if t_len == 0 {
            return Err(Error::Empty("cannot unroll over zero frames".into()));
        }
        let (n, _, h, w) = lr[0].dims4();
        let zero = RecurrentState::zeros(n, self.cfg.state_channels, h, w);
        self.check_inputs(&lr[0], &lr[0], &lr[0], &zero)?;
        for f in lr {
            if f.shape() != lr[0].shape() {
                return Err(Error::Shape(format!("frame {:?} differs from {:?}", f.shape(), lr[0].shape())));
            }
        }
        let frames: Vec<NodeId> = lr.iter().map(|t| g.constant(t.clone())).collect();
        let mut state = g.constant(zero.features);
        let mut out = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let prev = frames[t.saturating_sub(1)];
            let next = frames[(t + 1).min(t_len - 1)];
            let base = g.constant(bicubic_x4(&lr[t])?);
            let s = self.step_nodes(g, prev, frames[t], next, state, base);
            state = s.state;
            out.push(s.sr);
        }
        Ok(out)
    }
}

/// Frame-at-a-time upscaling with one frame of lookahead: the SR of frame
/// `t` is emitted once frame `t + 1` arrives (or on [`SrStream::finish`]).
pub struct SrStream<'a> {
    net: &'a VsrNet,
    prev: Option<Frame>,
    cur: Option<Frame>,
    state: Option<RecurrentState>,
}

impl<'a> SrStream<'a> {
    pub fn new(net: &'a VsrNet) -> Self {
        Self {
            net,
            prev: None,
            cur: None,
            state: None,
        }
    }

    pub fn push(&mut self, frame: Frame) -> Result<Option<Frame>> {
        let Some(cur) = self.cur.take() else {
            self.state = Some(self.net.initial_state(&frame));
            self.cur = Some(frame);
            return Ok(None);
        };
        frame.check_same(&cur)?;
        let prev = self.prev.take().unwrap_or_else(|| cur.clone());
        let state = self.state.take().expect("state set with the first frame");
        let (sr, st) = self.net.sr_step(&prev, &cur, &frame, &state)?;
        self.state = Some(st);
        self.prev = Some(cur);
        self.cur = Some(frame);
        Ok(Some(sr))
    }

    /// Emits the last frame, using it as its own successor.
    pub fn finish(mut self) -> Result<Option<Frame>> {
        let Some(cur) = self.cur.take() else {
            return Ok(None);
        };
        let prev = self.prev.take().unwrap_or_else(|| cur.clone());
        let state = self.state.take().expect("state set with the first frame");
        Ok(Some(self.net.sr_step(&prev, &cur, &cur, &state)?.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_parameter_count() {
        let n = VsrNet::new(VsrConfig::paper(), 0).unwrap().num_parameters();
        let target = 1.47e6;
        assert!((n as f64 - target).abs() <= 0.05 * target, "{n}");
    }

    #[test]
    fn fresh_network_is_bicubic() {
        let net = VsrNet::new(VsrConfig::tiny(), 1).unwrap();
        let f = Frame::from_fn(8, 8, |c, y, x| ((c + y * 3 + x) % 7) as f32 / 6.0);
        let (sr, st) = net.sr_step(&f, &f, &f, &net.initial_state(&f)).unwrap();
        assert_eq!(sr, upscale(&f, 4, ResizeMethod::Bicubic).unwrap());
        assert_eq!(st.dims(), (8, 8));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let net = VsrNet::new(VsrConfig::tiny(), 1).unwrap();
        let a = Frame::filled(8, 8, [0.5; 3]);
        let b = Frame::filled(8, 4, [0.5; 3]);
        assert!(matches!(net.sr_step(&a, &b, &a, &net.initial_state(&b)), Err(Error::Shape(_))));
        assert!(matches!(net.sr_step(&a, &a, &a, &net.initial_state(&b)), Err(Error::Shape(_))));
        assert!(matches!(net.sr_clip(&Clip::default()), Err(Error::Empty(_))));
    }
}
