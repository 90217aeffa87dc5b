//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node holding its value. [`Graph::backward`] walks the tape in reverse and
//! returns [`Gradients`] for every node that (transitively) depends on a
//! variable. Nodes created from constants, or through [`Graph::detach`],
//! never receive gradient, which is how stop-gradient is expressed.

pub mod kernels;

use std::collections::HashMap;

pub use kernels::Conv2dSpec;
use kernels::GroupNormStats;

use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: Conv2dSpec,
    },
    GroupNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        stats: GroupNormStats<T>,
    },
    Silu(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, T),
    Abs(NodeId),
    Square(NodeId),
    Softplus(NodeId),
    PixelShuffle(NodeId, usize),
    Reshape(NodeId),
    Concat(Vec<NodeId>),
    SliceChannels(NodeId, usize),
    Bmm {
        a: NodeId,
        ta: bool,
        b: NodeId,
        tb: bool,
    },
    SoftmaxLast(NodeId),
    Mean(NodeId),
    StraightThrough(NodeId),
    GatherRows {
        table: NodeId,
        indices: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Slopes picked by the piecewise-linear ops (`relu`, `leaky_relu`, `abs`)
/// of one forward pass, in call order. Replaying it in a later pass makes
/// each of those ops linear, so a finite-difference check sees the same
/// branch that back-propagation differentiated.
#[derive(Clone, Debug, Default)]
pub struct KinkPattern<T> {
    slopes: Vec<Tensor<T>>,
}

impl<T> KinkPattern<T> {
    pub fn len(&self) -> usize {
        self.slopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slopes.is_empty()
    }
}

enum KinkMode<T> {
    Off,
    Record(Vec<Tensor<T>>),
    Replay(Vec<Tensor<T>>, usize),
}

/// The recorded computation of one forward pass.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, NodeId>,
    param_order: Vec<String>,
    frozen_prefixes: Vec<String>,
    grad_enabled: bool,
    kinks: KinkMode<T>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
            frozen_prefixes: Vec::new(),
            grad_enabled: true,
            kinks: KinkMode::Off,
        }
    }

    /// A graph in which nothing requires gradient (inference).
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Starts recording the slope of every piecewise-linear op.
    pub fn record_kinks(&mut self) {
        self.kinks = KinkMode::Record(Vec::new());
    }

    /// The slopes recorded since [`Graph::record_kinks`]; recording stops.
    pub fn take_kinks(&mut self) -> KinkPattern<T> {
        match std::mem::replace(&mut self.kinks, KinkMode::Off) {
            KinkMode::Record(slopes) => KinkPattern { slopes },
            _ => KinkPattern::default(),
        }
    }

    /// Makes the next piecewise-linear ops multiply by the recorded slopes
    /// instead of choosing a branch. Panics if the ops do not line up with
    /// the pattern.
    pub fn replay_kinks(&mut self, pattern: KinkPattern<T>) {
        self.kinks = KinkMode::Replay(pattern.slopes, 0);
    }

    /// Returns the replacement node under replay; records `slope` under
    /// recording.
    fn kink(&mut self, x: NodeId, slope: impl Fn(T) -> T) -> Option<NodeId> {
        match &mut self.kinks {
            KinkMode::Off => None,
            KinkMode::Record(p) => {
                p.push(self.nodes[x.0].value.map(slope));
                None
            }
            KinkMode::Replay(p, i) => {
                let s = p.get(*i).cloned().expect("kink pattern exhausted");
                *i += 1;
                assert_eq!(s.shape(), self.nodes[x.0].value.shape(), "kink pattern does not match op {}", *i - 1);
                let c = self.constant(s);
                Some(self.mul(x, c))
            }
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.rg(id)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Registers a named parameter once per graph; later calls return the
    /// same node.
    pub fn param(&mut self, name: &str, value: &Tensor<T>, trainable: bool) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let trainable = trainable && !self.frozen_prefixes.iter().any(|p| name.starts_with(p.as_str()));
        let id = self.push(value.clone(), Op::Leaf, trainable);
        self.params.insert(name.to_string(), id);
        self.param_order.push(name.to_string());
        id
    }

    /// Parameters registered later whose name starts with `prefix` get no
    /// gradient in this graph (e.g. the critic during a generator update).
    pub fn freeze_prefix(&mut self, prefix: &str) {
        self.frozen_prefixes.push(prefix.to_string());
    }

    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    /// Names of registered parameters in registration order.
    pub fn param_names(&self) -> &[String] {
        &self.param_order
    }

    /// Position marker for [`Graph::collapse`].
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// In a no-grad graph, drops every node recorded since `mark` except
    /// `out`, which is re-inserted as a constant. Keeps peak memory of
    /// inference bounded by one block's intermediates. With gradients
    /// enabled the tape must be kept, so this returns `out` unchanged.
    ///
    /// Callers must not hold other node ids created after `mark`.
    pub fn collapse(&mut self, mark: usize, out: NodeId) -> NodeId {
        if self.grad_enabled || out.0 < mark {
            return out;
        }
        let value = std::mem::replace(&mut self.nodes[out.0].value, Tensor::zeros(vec![0]));
        self.nodes.truncate(mark);
        self.params.retain(|_, id| id.0 < mark);
        let params = &self.params;
        self.param_order.retain(|n| params.contains_key(n));
        self.constant(value)
    }

    /// A copy of `x` cut off from the tape (`sg[x]`).
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let s = T::from_f64(s);
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let s = T::from_f64(s);
        let v = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: Conv2dSpec) -> NodeId {
        let v = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(v, Op::Conv2d { x, w, b, spec }, rg)
    }

    pub fn group_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, groups: usize, eps: f64) -> NodeId {
        let (v, stats) =
            kernels::group_norm_forward(self.value(x), self.value(gamma), self.value(beta), groups, eps);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            v,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
            rg,
        )
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a / (T::ONE + (-a).exp()));
        let rg = self.rg(x);
        self.push(v, Op::Silu(x), rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        if let Some(n) = self.kink(x, |a| if a > T::ZERO { T::ONE } else { T::ZERO }) {
            return n;
        }
        let v = self.value(x).map(|a| a.max(T::ZERO));
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = T::from_f64(slope);
        if let Some(n) = self.kink(x, |a| if a > T::ZERO { T::ONE } else { s }) {
            return n;
        }
        let v = self.value(x).map(|a| if a > T::ZERO { a } else { a * s });
        let rg = self.rg(x);
        self.push(v, Op::LeakyRelu(x, s), rg)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        if let Some(n) = self.kink(x, |a| if a < T::ZERO { -T::ONE } else { T::ONE }) {
            return n;
        }
        let v = self.value(x).map(|a| a.abs());
        let rg = self.rg(x);
        self.push(v, Op::Abs(x), rg)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a * a);
        let rg = self.rg(x);
        self.push(v, Op::Square(x), rg)
    }

    /// `ln(1 + e^x)`, evaluated stably in double precision.
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| {
            let a = a.to_f64();
            T::from_f64(a.max(0.0) + (-a.abs()).exp().ln_1p())
        });
        let rg = self.rg(x);
        self.push(v, Op::Softplus(x), rg)
    }

    pub fn pixel_shuffle(&mut self, x: NodeId, r: usize) -> NodeId {
        let v = kernels::pixel_shuffle(self.value(x), r);
        let rg = self.rg(x);
        self.push(v, Op::PixelShuffle(x, r), rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> NodeId {
        let v = self.value(x).clone().reshape(shape);
        let rg = self.rg(x);
        self.push(v, Op::Reshape(x), rg)
    }

    pub fn concat_channels(&mut self, xs: &[NodeId]) -> NodeId {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&x| self.value(x)).collect();
        let v = kernels::concat_channels(&vals);
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push(v, Op::Concat(xs.to_vec()), rg)
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = kernels::slice_channels(self.value(x), start, len);
        let rg = self.rg(x);
        self.push(v, Op::SliceChannels(x, start), rg)
    }

    pub fn bmm(&mut self, a: NodeId, ta: bool, b: NodeId, tb: bool) -> NodeId {
        let v = kernels::bmm(self.value(a), ta, self.value(b), tb);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Bmm { a, ta, b, tb }, rg)
    }

    pub fn softmax_last(&mut self, x: NodeId) -> NodeId {
        let v = kernels::softmax_last(self.value(x));
        let rg = self.rg(x);
        self.push(v, Op::SoftmaxLast(x), rg)
    }

    /// Mean over all elements, as a one-element tensor.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(T::from_f64(self.value(x).mean()));
        let rg = self.rg(x);
        self.push(v, Op::Mean(x), rg)
    }

    /// Forward value is `quantized`; the backward pass hands the incoming
    /// gradient to `z` unchanged.
    pub fn straight_through(&mut self, z: NodeId, quantized: Tensor<T>) -> NodeId {
        assert_eq!(
            self.value(z).shape(),
            quantized.shape(),
            "straight_through: shape mismatch"
        );
        let rg = self.rg(z);
        self.push(quantized, Op::StraightThrough(z), rg)
    }

    /// Gathers rows of a `[rows, d]` table into an NCHW map of shape
    /// `[n, d, h, w]`, where `indices` lists the row for each `(n, y, x)`.
    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize], n: usize, h: usize, w: usize) -> NodeId {
        let t = self.value(table);
        assert_eq!(t.shape().len(), 2, "gather_rows: table must be rank 2");
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        assert_eq!(indices.len(), n * h * w, "gather_rows: index count mismatch");
        let hw = h * w;
        let mut out = Tensor::zeros(vec![n, d, h, w]);
        {
            let od = out.data_mut();
            for (p, &idx) in indices.iter().enumerate() {
                assert!(idx < rows, "gather_rows: index {idx} out of range {rows}");
                let (bi, pos) = (p / hw, p % hw);
                let row = &t.data()[idx * d..(idx + 1) * d];
                for (c, &v) in row.iter().enumerate() {
                    od[(bi * d + c) * hw + pos] = v;
                }
            }
        }
        let rg = self.rg(table);
        self.push(
            out,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    /// `mean(|a - b|)`
    pub fn l1_loss(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean(d)
    }

    /// `mean((a - b)^2)`
    pub fn mse_loss(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let d = self.square(d);
        self.mean(d)
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.value(id).data()[0].to_f64()
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: NodeId) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if !self.rg(root) {
            return Gradients { grads };
        }
        grads[root.0] = Some(Tensor::full(self.value(root).shape().to_vec(), T::ONE));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
        if !self.rg(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|v| v * s));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Conv2d { x, w, b, spec } => {
                let need = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let (gx, gw, gb) = kernels::conv2d_backward(self.value(*x), self.value(*w), spec, g, need);
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, gw);
                }
                if let (Some(b), Some(gb)) = (b, gb) {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            } => {
                let (gx, gg, gb) =
                    kernels::group_norm_backward(self.value(*x), self.value(*gamma), stats, *groups, g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gamma, gg);
                self.accumulate(grads, *beta, gb);
            }
            Op::Silu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, a| {
                    let s = T::ONE / (T::ONE + (-a).exp());
                    gv * s * (T::ONE + a * (T::ONE - s))
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, a| if a > T::ZERO { gv } else { T::ZERO });
                self.accumulate(grads, *x, gx);
            }
            Op::LeakyRelu(x, s) => {
                let s = *s;
                let gx = g.zip_map(self.value(*x), |gv, a| if a > T::ZERO { gv } else { gv * s });
                self.accumulate(grads, *x, gx);
            }
            Op::Abs(x) => {
                let gx = g.zip_map(self.value(*x), |gv, a| {
                    if a > T::ZERO {
                        gv
                    } else if a < T::ZERO {
                        -gv
                    } else {
                        T::ZERO
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Square(x) => {
                let two = T::from_f64(2.0);
                let gx = g.zip_map(self.value(*x), |gv, a| gv * two * a);
                self.accumulate(grads, *x, gx);
            }
            Op::Softplus(x) => {
                let gx = g.zip_map(self.value(*x), |gv, a| gv * T::from_f64(1.0 / (1.0 + (-a.to_f64()).exp())));
                self.accumulate(grads, *x, gx);
            }
            Op::PixelShuffle(x, r) => {
                self.accumulate(grads, *x, kernels::pixel_unshuffle(g, *r));
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(shape));
            }
            Op::Concat(xs) => {
                let mut start = 0;
                for &x in xs {
                    let c = self.value(x).shape()[1];
                    if self.rg(x) {
                        self.accumulate(grads, x, kernels::slice_channels(g, start, c));
                    }
                    start += c;
                }
            }
            Op::SliceChannels(x, start) => {
                if self.rg(*x) {
                    let (n, c, h, w) = self.value(*x).dims4();
                    let len = g.shape()[1];
                    let hw = h * w;
                    let mut gx = Tensor::zeros(vec![n, c, h, w]);
                    for bi in 0..n {
                        let dst = (bi * c + start) * hw;
                        gx.data_mut()[dst..dst + len * hw]
                            .copy_from_slice(&g.data()[bi * len * hw..(bi + 1) * len * hw]);
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Bmm { a, ta, b, tb } => {
                // C = op(A) op(B); dA: d op(A) = G op(B)^T, dB: d op(B) = op(A)^T G
                if self.rg(*a) {
                    let ga = if *ta {
                        kernels::bmm(self.value(*b), *tb, g, true)
                    } else {
                        kernels::bmm(g, false, self.value(*b), !*tb)
                    };
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = if *tb {
                        kernels::bmm(g, true, self.value(*a), *ta)
                    } else {
                        kernels::bmm(self.value(*a), !*ta, g, false)
                    };
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::SoftmaxLast(x) => {
                let y = &node.value;
                let d = *y.shape().last().unwrap();
                let mut gx = Tensor::zeros(y.shape().to_vec());
                for ((gr, yr), out) in g
                    .data()
                    .chunks(d)
                    .zip(y.data().chunks(d))
                    .zip(gx.data_mut().chunks_mut(d))
                {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let s = g.data()[0] / T::from_f64(xv.numel() as f64);
                self.accumulate(grads, *x, Tensor::full(xv.shape().to_vec(), s));
            }
            Op::StraightThrough(z) => self.accumulate(grads, *z, g.clone()),
            Op::GatherRows { table, indices } => {
                let t = self.value(*table);
                let d = t.shape()[1];
                let (_, _, h, w) = g.dims4();
                let hw = h * w;
                let mut gt = Tensor::zeros(t.shape().to_vec());
                for (p, &idx) in indices.iter().enumerate() {
                    let (bi, pos) = (p / hw, p % hw);
                    for c in 0..d {
                        gt.data_mut()[idx * d + c] += g.data()[(bi * d + c) * hw + pos];
                    }
                }
                self.accumulate(grads, *table, gt);
            }
        }
    }
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros shaped like its value when nothing flowed
    /// into it.
    pub fn get_or_zeros(&self, graph: &Graph<T>, id: NodeId) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(id).shape().to_vec()))
    }

    /// Parameter gradients by name, in parameter registration order.
    pub fn params<'a>(&'a self, graph: &'a Graph<T>) -> impl Iterator<Item = (&'a str, Option<&'a Tensor<T>>)> {
        graph
            .param_names()
            .iter()
            .map(move |n| (n.as_str(), self.get(graph.params[n])))
    }
}
