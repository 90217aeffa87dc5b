//! Feature-space distance used as the perceptual loss.
//!
//! Any differentiable feature extractor can be plugged in. The default is a
//! small convolutional pyramid with fixed random weights drawn from a seed;
//! it is a stand-in for a pretrained network, which is an external asset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Conv2dSpec, Graph, NodeId};
use crate::nn::{Conv2d, ParamBuilder, ParamStore};
use crate::tensor::Real;

pub trait FeatureExtractor<T: Real>: Send + Sync {
    /// Feature maps of an image batch in `[0, 1]`. Any parameters must be
    /// registered as non-trainable.
    fn features(&self, g: &mut Graph<T>, x: NodeId) -> Vec<NodeId>;
}

/// Sum over feature levels of the mean squared feature difference.
pub fn perceptual_distance<T: Real>(
    fx: &dyn FeatureExtractor<T>,
    g: &mut Graph<T>,
    a: NodeId,
    b: NodeId,
) -> NodeId {
    let fa = fx.features(g, a);
    let fb = fx.features(g, b);
    let mut total: Option<NodeId> = None;
    for (x, y) in fa.into_iter().zip(fb) {
        let d = g.mse_loss(x, y);
        total = Some(match total {
            Some(t) => g.add(t, d),
            None => d,
        });
    }
    total.expect("feature extractor returned no features")
}

/// Stride-2 3x3 convolutions with ReLU, 3 -> 8 -> 16 -> 32 channels.
pub struct RandomPyramid<T: Real> {
    params: ParamStore<T>,
    convs: Vec<Conv2d>,
}

impl<T: Real> RandomPyramid<T> {
    pub fn new(seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut root = ParamBuilder::new(&mut params, &mut rng);
        let mut pb = root.pp("perceptual");
        let widths = [3, 8, 16, 32];
        let convs = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(&mut pb, &i.to_string(), w[0], w[1], 3, Conv2dSpec::new(2, 1)))
            .collect();
        params.freeze_all();
        Self { params, convs }
    }
}

impl<T: Real> FeatureExtractor<T> for RandomPyramid<T> {
    fn features(&self, g: &mut Graph<T>, x: NodeId) -> Vec<NodeId> {
        let x = g.scale(x, 2.0);
        let mut h = g.add_scalar(x, -1.0);
        let mut out = Vec::new();
        for c in &self.convs {
            h = c.forward(g, &self.params, h);
            h = g.relu(h);
            out.push(h);
        }
        out
    }
}
