//! Patch discriminator and adversarial losses shared by the degradation
//! model and the VSR network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Conv2dSpec, Graph, NodeId};
use crate::error::{Error, Result};
use crate::nn::{Adam, Conv2d, GroupNorm, ParamBuilder, ParamStore};
use crate::tensor::{Real, Tensor};

/// Name prefix of every discriminator parameter.
pub const PREFIX: &str = "discriminator";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    /// Number of stride-2 layers.
    pub layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            layers: 3,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.layers == 0 || self.layers > 8 {
            return Err(Error::Config("discriminator channels must be positive and layers in 1..=8".into()));
        }
        Ok(())
    }

    /// Smallest input side that still yields a logit.
    pub fn min_input(&self) -> usize {
        3 << self.layers
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanLoss {
    /// `0.5 (mean relu(1 - real) + mean relu(1 + fake))`, generator `-mean fake`.
    #[default]
    Hinge,
    /// Non-saturating logistic loss.
    Vanilla,
}

#[derive(Clone, Debug)]
struct Layer {
    conv: Conv2d,
    norm: Option<GroupNorm>,
    act: bool,
}

/// PatchGAN-style critic: 4x4 convolutions, `layers` of them with stride 2,
/// one more stride-1 layer, then a stride-1 projection to one logit per patch.
/// GroupNorm stands in for BatchNorm so that a batch of one is well defined.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator<T: Real> {
    pub cfg: DiscriminatorConfig,
    pub params: ParamStore<T>,
    layers: Vec<Layer>,
}

impl<T: Real> PatchDiscriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut root = ParamBuilder::new(&mut params, &mut rng);
        let mut pb = root.pp(PREFIX);
        let mut layers = Vec::new();
        let nf = cfg.base_channels;
        let s2 = Conv2dSpec::new(2, 1);
        let s1 = Conv2dSpec::new(1, 1);
        layers.push(Layer {
            conv: Conv2d::new(&mut pb, "0", 3, nf, 4, s2),
            norm: None,
            act: true,
        });
        let mut ch = nf;
        for i in 1..=cfg.layers {
            let out = nf * (1 << i.min(3));
            let spec = if i < cfg.layers { s2 } else { s1 };
            layers.push(Layer {
                conv: Conv2d::new(&mut pb, &i.to_string(), ch, out, 4, spec),
                norm: Some(GroupNorm::new(&mut pb, &format!("{i}.norm"), out, 32)),
                act: true,
            });
            ch = out;
        }
        layers.push(Layer {
            conv: Conv2d::new(&mut pb, &(cfg.layers + 1).to_string(), ch, 1, 4, s1),
            norm: None,
            act: false,
        });
        Ok(Self { cfg, params, layers })
    }

    /// Rebuilds the architecture around stored parameters, which must match
    /// it exactly.
    pub fn from_params(cfg: DiscriminatorConfig, params: ParamStore<T>) -> Result<Self> {
        let mut d = Self::new(cfg, 0)?;
        crate::nn::check_same_layout(&d.params, &params, PREFIX)?;
        d.params = params;
        Ok(d)
    }

    /// Patch logits `[n, 1, h', w']` for images in `[0, 1]`.
    pub fn logits_node(&self, g: &mut Graph<T>, x: NodeId) -> NodeId {
        let x = g.scale(x, 2.0);
        let mut h = g.add_scalar(x, -1.0);
        for l in &self.layers {
            h = l.conv.forward(g, &self.params, h);
            if let Some(n) = &l.norm {
                h = n.forward(g, &self.params, h);
            }
            if l.act {
                h = g.leaky_relu(h, 0.2);
            }
        }
        h
    }

    pub fn logits(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut g = Graph::no_grad();
        let x = g.constant(x.clone());
        let y = self.logits_node(&mut g, x);
        g.value(y).clone()
    }
}

/// Critic loss on real and fake logits, split into its two halves.
pub fn discriminator_loss<T: Real>(g: &mut Graph<T>, real: NodeId, fake: NodeId, kind: GanLoss) -> (NodeId, NodeId) {
    match kind {
        GanLoss::Hinge => {
            let r = g.scale(real, -1.0);
            let r = g.add_scalar(r, 1.0);
            let r = g.relu(r);
            let r = g.mean(r);
            let f = g.add_scalar(fake, 1.0);
            let f = g.relu(f);
            let f = g.mean(f);
            (g.scale(r, 0.5), g.scale(f, 0.5))
        }
        GanLoss::Vanilla => {
            let r = g.scale(real, -1.0);
            let r = g.softplus(r);
            let r = g.mean(r);
            let f = g.softplus(fake);
            let f = g.mean(f);
            (g.scale(r, 0.5), g.scale(f, 0.5))
        }
    }
}

/// Generator term on fake logits.
pub fn generator_loss<T: Real>(g: &mut Graph<T>, fake: NodeId, kind: GanLoss) -> NodeId {
    match kind {
        GanLoss::Hinge => {
            let m = g.mean(fake);
            g.scale(m, -1.0)
        }
        GanLoss::Vanilla => {
            let f = g.scale(fake, -1.0);
            let f = g.softplus(f);
            g.mean(f)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialLosses {
    pub real: f64,
    pub fake: f64,
    /// `real + fake`
    pub discriminator: f64,
    pub generator: f64,
}

/// Evaluates critic and generator losses on one real/fake pair and, given
/// an optimizer, updates the critic. The fake images enter as constants, so
/// no gradient reaches whatever produced them.
pub fn discriminator_step<T: Real>(
    disc: &mut PatchDiscriminator<T>,
    opt: Option<&mut Adam<T>>,
    x_real: &Tensor<T>,
    x_fake: &Tensor<T>,
    kind: GanLoss,
) -> Result<AdversarialLosses> {
    if x_real.shape() != x_fake.shape() {
        return Err(Error::Shape(format!(
            "real {:?} and fake {:?} batches differ",
            x_real.shape(),
            x_fake.shape()
        )));
    }
    let (_, _, h, w) = x_real.dims4();
    if h.min(w) < disc.cfg.min_input() {
        return Err(Error::Shape(format!(
            "critic needs inputs of at least {0}x{0}, got {w}x{h}",
            disc.cfg.min_input()
        )));
    }
    let mut g = Graph::new();
    let real = g.constant(x_real.clone());
    let fake = g.constant(x_fake.clone());
    let lr = disc.logits_node(&mut g, real);
    let lf = disc.logits_node(&mut g, fake);
    let (r, f) = discriminator_loss(&mut g, lr, lf, kind);
    let total = g.add(r, f);
    let gen = generator_loss(&mut g, lf, kind);
    let losses = AdversarialLosses {
        real: g.scalar_value(r),
        fake: g.scalar_value(f),
        discriminator: g.scalar_value(total),
        generator: g.scalar_value(gen),
    };
    if let Some(opt) = opt {
        let grads = g.backward(total);
        opt.step(&mut disc.params, &g, &grads, |_| 1.0);
    }
    Ok(losses)
}
