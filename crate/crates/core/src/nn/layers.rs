use crate::autograd::{Conv2dSpec, Graph, NodeId};
use crate::nn::{ParamBuilder, ParamStore};
use crate::tensor::Real;

/// 2-D convolution with bias, PyTorch-style uniform `1/sqrt(fan_in)` init.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: String,
    bias: String,
    spec: Conv2dSpec,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new<T: Real>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: Conv2dSpec,
    ) -> Self {
        let mut pb = pb.pp(name);
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let weight = pb.uniform("weight", vec![cout, cin, k, k], bound);
        let bias = pb.uniform("bias", vec![cout], bound);
        Self {
            weight,
            bias,
            spec,
            in_channels: cin,
            out_channels: cout,
        }
    }

    /// Same layout as [`Conv2d::new`] but with every weight and bias zero.
    pub fn zeros<T: Real>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: Conv2dSpec,
    ) -> Self {
        let mut pb = pb.pp(name);
        let weight = pb.constant("weight", vec![cout, cin, k, k], 0.0);
        let bias = pb.constant("bias", vec![cout], 0.0);
        Self {
            weight,
            bias,
            spec,
            in_channels: cin,
            out_channels: cout,
        }
    }

    /// `k x k` stride-1 convolution with same padding.
    pub fn same<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::new(pb, name, cin, cout, k, Conv2dSpec::same(k))
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn bias_name(&self) -> &str {
        &self.bias
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let w = ps.node(g, &self.weight);
        let b = ps.node(g, &self.bias);
        g.conv2d(x, w, Some(b), self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    gamma: String,
    beta: String,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    /// Uses `gcd(channels, max_groups)` groups so any channel count works.
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize, max_groups: usize) -> Self {
        let mut pb = pb.pp(name);
        Self {
            gamma: pb.constant("weight", vec![channels], 1.0),
            beta: pb.constant("bias", vec![channels], 0.0),
            groups: gcd(channels, max_groups.max(1)),
            eps: 1e-6,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let gamma = ps.node(g, &self.gamma);
        let beta = ps.node(g, &self.beta);
        g.group_norm(x, gamma, beta, self.groups, self.eps)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
