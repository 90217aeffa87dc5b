use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{Downsample, NonLocal, ResStack, Upsample};
use super::config::{MsVqganConfig, QuantizerMode, Stage};
use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::gan::{generator_loss, GanLoss, PatchDiscriminator};
use crate::nn::{check_same_layout, Conv2d, GroupNorm, ParamBuilder, ParamStore};
use crate::perceptual::{perceptual_distance, FeatureExtractor, RandomPyramid};
use crate::tensor::{Real, Tensor};
use crate::vq::{quantize_node, Branch, Codebook, QuantizationResult};

/// Parameter scopes of the shared stem and the top branch.
pub const TOP_SCOPES: [&str; 3] = ["stem.", "top_enc.", "top_dec."];

#[derive(Clone, Debug)]
struct Head {
    norm: GroupNorm,
    conv: Conv2d,
}

impl Head {
    fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, cin: usize, cout: usize, groups: usize) -> Self {
        Self {
            norm: GroupNorm::new(pb, "norm_out", cin, groups),
            conv: Conv2d::same(pb, "conv_out", cin, cout, 3),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let h = self.norm.forward(g, ps, x);
        let h = g.silu(h);
        self.conv.forward(g, ps, h)
    }
}

#[derive(Clone, Debug)]
struct TopEncoder {
    down: Vec<Downsample>,
    res: Vec<ResStack>,
    widen: Conv2d,
    res_wide: ResStack,
    attn: NonLocal,
    head: Head,
}

#[derive(Clone, Debug)]
struct TopDecoder {
    conv_in: Conv2d,
    attn: NonLocal,
    res_in: ResStack,
    narrow: Conv2d,
    // One (residuals, upsample) pair per resolution, lowest first.
    up_res: Vec<ResStack>,
    up: Vec<Upsample>,
    res_out: ResStack,
    head: Head,
}

/// Middle or bottom encoder: (conv, residuals) stages then the latent head.
#[derive(Clone, Debug)]
struct SideEncoder {
    stages: Vec<(Conv2d, ResStack)>,
    head: Head,
}

/// Middle or bottom decoder: input conv, then (residuals, conv) stages; the
/// last conv produces the lateral feature and starts at zero.
#[derive(Clone, Debug)]
struct SideDecoder {
    conv_in: Conv2d,
    stages: Vec<(ResStack, Conv2d)>,
}

#[derive(Clone, Debug)]
struct Arch {
    stem: Conv2d,
    top_enc: TopEncoder,
    top_dec: TopDecoder,
    middle: Option<(SideEncoder, SideDecoder)>,
    bottom: Option<(SideEncoder, SideDecoder)>,
}

fn build_arch<T: Real>(cfg: &MsVqganConfig, ps: &mut ParamStore<T>, seed: u64) -> Arch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut root = ParamBuilder::new(ps, &mut rng);
    let c = cfg.base_channels;
    let nz = cfg.embed_dim;
    let nb = cfg.res_blocks;
    let gr = cfg.norm_groups;

    let stem = Conv2d::same(&mut root, "stem", 3, c, 3);

    let top_enc = {
        let mut pb = root.pp("top_enc");
        let widths = [(c, c), (c, 2 * c), (2 * c, 2 * c)];
        let down = widths
            .iter()
            .enumerate()
            .map(|(i, &(cin, _))| Downsample::new(&mut pb, &format!("down{i}"), cin))
            .collect();
        let res = widths
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| ResStack::new(&mut pb, &format!("res{i}"), cin, cout, nb, gr))
            .collect();
        TopEncoder {
            down,
            res,
            widen: Conv2d::same(&mut pb, "widen", 2 * c, 4 * c, 3),
            res_wide: ResStack::new(&mut pb, "res_wide", 4 * c, 4 * c, nb, gr),
            attn: NonLocal::new(&mut pb, "attn", 4 * c, gr),
            head: Head::new(&mut pb, 4 * c, nz, gr),
        }
    };

    let top_dec = {
        let mut pb = root.pp("top_dec");
        let widths = [(2 * c, 2 * c), (2 * c, c), (c, c)];
        TopDecoder {
            conv_in: Conv2d::same(&mut pb, "conv_in", nz, 4 * c, 3),
            attn: NonLocal::new(&mut pb, "attn", 4 * c, gr),
            res_in: ResStack::new(&mut pb, "res_in", 4 * c, 4 * c, nb, gr),
            narrow: Conv2d::same(&mut pb, "narrow", 4 * c, 2 * c, 3),
            up_res: widths
                .iter()
                .enumerate()
                .map(|(i, &(cin, _))| ResStack::new(&mut pb, &format!("res{i}"), cin, cin, nb, gr))
                .collect(),
            up: widths
                .iter()
                .enumerate()
                .map(|(i, &(cin, cout))| Upsample::new(&mut pb, &format!("up{i}"), cin, cout))
                .collect(),
            res_out: ResStack::new(&mut pb, "res_out", c, c, nb, gr),
            head: Head::new(&mut pb, c, 3, gr),
        }
    };

    if cfg.per_branch_codebooks {
        for b in active_branches(cfg.stage) {
            root.pp("codebook")
                .pp(b.name())
                .uniform("entries", vec![cfg.codebook_size, nz], 1.0 / cfg.codebook_size as f64);
        }
    } else {
        root.pp("codebook")
            .uniform("entries", vec![cfg.codebook_size, nz], 1.0 / cfg.codebook_size as f64);
    }

    let side = |pb: &mut ParamBuilder<'_, T>, enc_widths: &[(usize, usize)], dec_widths: &[(usize, usize)]| {
        let enc = {
            let mut pb = pb.pp("enc");
            SideEncoder {
                stages: enc_widths
                    .iter()
                    .enumerate()
                    .map(|(i, &(cin, cout))| {
                        (
                            Conv2d::same(&mut pb, &format!("conv{i}"), cin, cout, 3),
                            ResStack::new(&mut pb, &format!("res{i}"), cout, cout, nb, gr),
                        )
                    })
                    .collect(),
                head: Head::new(&mut pb, enc_widths.last().unwrap().1, nz, gr),
            }
        };
        let dec = {
            let mut pb = pb.pp("dec");
            let conv_in = Conv2d::same(&mut pb, "conv_in", nz, 4 * c, 3);
            let last = dec_widths.len() - 1;
            let stages = dec_widths
                .iter()
                .enumerate()
                .map(|(i, &(cin, cout))| {
                    let res = ResStack::new(&mut pb, &format!("res{i}"), cin, cin, nb, gr);
                    let conv = if i == last {
                        Conv2d::zeros(&mut pb, &format!("conv{i}"), cin, cout, 3, crate::autograd::Conv2dSpec::same(3))
                    } else {
                        Conv2d::same(&mut pb, &format!("conv{i}"), cin, cout, 3)
                    };
                    (res, conv)
                })
                .collect();
            SideDecoder { conv_in, stages }
        };
        (enc, dec)
    };

    let (middle, bottom) = match cfg.stage {
        Stage::Stage1 => (None, None),
        Stage::Stage2 => {
            let m = side(
                &mut root.pp("middle"),
                &[(2 * c, 2 * c), (2 * c, 4 * c)],
                &[(4 * c, 2 * c), (2 * c, 2 * c)],
            );
            let b = side(
                &mut root.pp("bottom"),
                &[(c, 2 * c), (2 * c, 2 * c), (2 * c, 4 * c)],
                &[(4 * c, 2 * c), (2 * c, 2 * c), (2 * c, c)],
            );
            (Some(m), Some(b))
        }
    };

    Arch {
        stem,
        top_enc,
        top_dec,
        middle,
        bottom,
    }
}

fn active_branches(stage: Stage) -> &'static [Branch] {
    match stage {
        Stage::Stage1 => &[Branch::Top],
        Stage::Stage2 => &[Branch::Top, Branch::Middle, Branch::Bottom],
    }
}

/// Encoder-side graph nodes. Latents are `[n, n_z, h, w]`.
#[derive(Clone, Copy, Debug)]
pub struct EncoderNodes {
    pub x_b: NodeId,
    pub x_m: NodeId,
    pub z_t: NodeId,
    pub z_m: Option<NodeId>,
    pub z_b: Option<NodeId>,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderNodes {
    /// Reconstruction in `[0, 1]` units, not clamped.
    pub output: NodeId,
    pub xhat_m: Option<NodeId>,
    pub xhat_b: Option<NodeId>,
    /// Activation entering the last convolution.
    pub head_input: NodeId,
}

/// Everything recorded by one training-style forward pass.
pub struct ForwardNodes<T> {
    pub input: NodeId,
    pub encoded: EncoderNodes,
    pub decoded: DecoderNodes,
    pub quantized: Vec<(Branch, QuantizationResult<T>)>,
    /// `mean |x - x_hat|`
    pub reconstruction: NodeId,
    pub codebook_terms: NodeId,
    pub commitment_terms: NodeId,
    /// Reconstruction plus the codebook and commitment terms of every branch.
    pub vq: NodeId,
    pub perceptual: NodeId,
}

/// Objective nodes plus the adversarial balancing factor, when active.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: NodeId,
    pub adversarial: Option<NodeId>,
    pub adversarial_scale: Option<f64>,
}

/// Intermediate tensors of the three branches (NCHW).
#[derive(Clone, Debug)]
pub struct BranchFeatures<T> {
    pub x_m: Tensor<T>,
    pub x_b: Tensor<T>,
    pub z_t: Tensor<T>,
    pub z_m: Option<Tensor<T>>,
    pub z_b: Option<Tensor<T>>,
    pub xhat_m: Option<Tensor<T>>,
    pub xhat_b: Option<Tensor<T>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub vq: f64,
    pub perceptual: f64,
    pub adversarial: Option<f64>,
    /// Balancing factor applied to the adversarial term.
    #[serde(default)]
    pub adversarial_scale: Option<f64>,
    /// Weighted sum of the active terms.
    pub total: f64,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [self.reconstruction, self.codebook, self.commitment, self.vq, self.perceptual, self.total]
            .iter()
            .chain(self.adversarial.iter())
            .chain(self.adversarial_scale.iter())
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction<T> {
    /// Clamped to `[0, 1]`.
    pub output: Tensor<T>,
    pub losses: LossReport,
    pub quantized: Vec<(Branch, QuantizationResult<T>)>,
}

/// The three-branch multi-scale VQGAN generator.
#[derive(Clone)]
pub struct MsVqgan<T: Real> {
    cfg: MsVqganConfig,
    arch: Arch,
    pub params: ParamStore<T>,
    perceptual: Arc<dyn FeatureExtractor<T>>,
}

impl<T: Real> std::fmt::Debug for MsVqgan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MsVqgan")
            .field("cfg", &self.cfg)
            .field("params", &self.params.len())
            .finish()
    }
}

impl<T: Real> MsVqgan<T> {
    pub fn new(cfg: MsVqganConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let arch = build_arch(&cfg, &mut params, seed);
        let perceptual = Arc::new(RandomPyramid::new(cfg.perceptual_seed));
        Ok(Self {
            cfg,
            arch,
            params,
            perceptual,
        })
    }

    /// Wraps stored parameters, which must match the architecture of `cfg`
    /// exactly.
    pub fn from_params(cfg: MsVqganConfig, params: ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        check_same_layout(&m.params, &params, "degradation model")?;
        m.params = params;
        Ok(m)
    }

    /// A stage-2 model whose stem, top branch and codebook come from a
    /// stage-1 model; the new branches are initialized from `seed`, with
    /// their lateral outputs starting at zero.
    pub fn load_stage1(stage1: &MsVqgan<T>, cfg: MsVqganConfig, seed: u64) -> Result<Self> {
        if stage1.stage() != Stage::Stage1 {
            return Err(Error::Stage {
                expected: 1,
                found: stage1.stage().number(),
            });
        }
        let cfg = cfg.with_stage(Stage::Stage2);
        let diffs = architecture_diff(&stage1.cfg, &cfg);
        if !diffs.is_empty() {
            return Err(Error::ConfigDiff(diffs));
        }
        let mut m = Self::new(cfg, seed)?;
        for (name, t) in stage1.params.iter() {
            let name = if m.cfg.per_branch_codebooks || !name.starts_with("codebook.") {
                name.to_string()
            } else {
                "codebook.entries".to_string()
            };
            *m.params.get_mut(&name).ok_or_else(|| Error::Integrity {
                member: name.clone(),
                reason: "stage-1 parameter has no stage-2 counterpart".into(),
            })? = t.clone();
        }
        m.perceptual = stage1.perceptual.clone();
        Ok(m)
    }

    pub fn config(&self) -> &MsVqganConfig {
        &self.cfg
    }

    pub fn stage(&self) -> Stage {
        self.cfg.stage
    }

    pub fn set_perceptual(&mut self, fx: Arc<dyn FeatureExtractor<T>>) {
        self.perceptual = fx;
    }

    /// Same weights in another precision (perceptual network rebuilt from
    /// its seed).
    pub fn cast<U: Real>(&self) -> MsVqgan<U> {
        MsVqgan {
            cfg: self.cfg.clone(),
            arch: self.arch.clone(),
            params: self.params.cast(),
            perceptual: Arc::new(RandomPyramid::new(self.cfg.perceptual_seed)),
        }
    }

    pub fn codebook_name(&self, branch: Branch) -> String {
        if self.cfg.per_branch_codebooks {
            format!("codebook.{}.entries", branch.name())
        } else {
            "codebook.entries".to_string()
        }
    }

    pub fn codebook(&self, branch: Branch) -> Result<Codebook<T>> {
        let name = self.codebook_name(branch);
        let t = self
            .params
            .get(&name)
            .ok_or_else(|| Error::Contract(format!("{} branch is not active in a {} model", branch.name(), self.stage())))?;
        Codebook::new(t.clone())
    }

    /// Learning-rate multiplier for a parameter under the current stage.
    pub fn lr_multiplier(&self, name: &str) -> f64 {
        if self.cfg.stage == Stage::Stage2 && TOP_SCOPES.iter().any(|s| name.starts_with(s)) {
            1.0 / self.cfg.top_lr_divisor
        } else {
            1.0
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!("expected an [n, 3, H, W] batch, got {shape:?}")));
        }
        let (h, w) = (shape[2], shape[3]);
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Shape(format!("input {w}x{h} is not divisible by 8")));
        }
        Ok(())
    }

    /// Encodes an image batch in `[0, 1]`.
    pub fn encode_nodes(&self, g: &mut Graph<T>, x: NodeId) -> Result<EncoderNodes> {
        self.check_input(g.value(x).shape())?;
        let ps = &self.params;
        let a = &self.arch;
        let h = g.scale(x, 2.0);
        let h = g.add_scalar(h, -1.0);
        let mut h = a.stem.forward(g, ps, h);
        let te = &a.top_enc;
        let mut taps = Vec::new();
        for (down, res) in te.down.iter().zip(&te.res) {
            h = down.forward(g, ps, h);
            h = res.forward(g, ps, h);
            taps.push(h);
        }
        let (x_b, x_m) = (taps[0], taps[1]);
        let h = te.widen.forward(g, ps, h);
        let h = te.res_wide.forward(g, ps, h);
        let h = te.attn.forward(g, ps, h);
        let z_t = te.head.forward(g, ps, h);
        let side = |g: &mut Graph<T>, enc: &SideEncoder, x: NodeId| {
            let mut h = x;
            for (conv, res) in &enc.stages {
                h = conv.forward(g, ps, h);
                h = res.forward(g, ps, h);
            }
            enc.head.forward(g, ps, h)
        };
        let z_m = a.middle.as_ref().map(|(e, _)| side(g, e, x_m));
        let z_b = a.bottom.as_ref().map(|(e, _)| side(g, e, x_b));
        Ok(EncoderNodes { x_b, x_m, z_t, z_m, z_b })
    }

    /// Decodes quantized latents. Stage-1 models take `zq_t` only; stage-2
    /// models need all three.
    pub fn decode_nodes(
        &self,
        g: &mut Graph<T>,
        zq_t: NodeId,
        zq_m: Option<NodeId>,
        zq_b: Option<NodeId>,
    ) -> Result<DecoderNodes> {
        let nz = self.cfg.embed_dim;
        let st = g.value(zq_t).shape().to_vec();
        if st.len() != 4 || st[1] != nz || st[2] == 0 || st[3] == 0 {
            return Err(Error::Shape(format!("top latent must be [n, {nz}, h, w], got {st:?}")));
        }
        let (n, h8, w8) = (st[0], st[2], st[3]);
        let expect = |g: &Graph<T>, id: Option<NodeId>, f: usize, what: &str| -> Result<()> {
            match id {
                Some(id) => {
                    let s = g.value(id).shape();
                    let want = [n, nz, h8 * f, w8 * f];
                    if s != want {
                        return Err(Error::Shape(format!("{what} latent is {s:?}, expected {want:?}")));
                    }
                    Ok(())
                }
                None => Err(Error::Shape(format!("{what} latent is required by a stage-2 model"))),
            }
        };
        match self.cfg.stage {
            Stage::Stage1 => {
                if zq_m.is_some() || zq_b.is_some() {
                    return Err(Error::Contract("a stage-1 model decodes the top latent only".into()));
                }
            }
            Stage::Stage2 => {
                expect(g, zq_m, 2, "middle")?;
                expect(g, zq_b, 4, "bottom")?;
            }
        }
        let ps = &self.params;
        let a = &self.arch;
        let side = |g: &mut Graph<T>, dec: &SideDecoder, z: NodeId| {
            let mut h = dec.conv_in.forward(g, ps, z);
            for (res, conv) in &dec.stages {
                h = res.forward(g, ps, h);
                h = conv.forward(g, ps, h);
            }
            h
        };
        let xhat_m = match (&a.middle, zq_m) {
            (Some((_, d)), Some(z)) => Some(side(g, d, z)),
            _ => None,
        };
        let xhat_b = match (&a.bottom, zq_b) {
            (Some((_, d)), Some(z)) => Some(side(g, d, z)),
            _ => None,
        };
        let td = &a.top_dec;
        let h = td.conv_in.forward(g, ps, zq_t);
        let h = td.attn.forward(g, ps, h);
        let h = td.res_in.forward(g, ps, h);
        let mut h = td.narrow.forward(g, ps, h);
        let laterals = [xhat_m, xhat_b, None];
        for ((res, up), lat) in td.up_res.iter().zip(&td.up).zip(laterals) {
            h = res.forward(g, ps, h);
            h = up.forward(g, ps, h);
            if let Some(l) = lat {
                h = g.add(h, l);
            }
        }
        let h = td.res_out.forward(g, ps, h);
        let h = td.head.norm.forward(g, ps, h);
        let head_input = g.silu(h);
        let h = td.head.conv.forward(g, ps, head_input);
        let h = g.add_scalar(h, 1.0);
        let output = g.scale(h, 0.5);
        Ok(DecoderNodes {
            output,
            xhat_m,
            xhat_b,
            head_input,
        })
    }

    /// Encode, quantize every active branch (straight-through), decode, and
    /// record the VQ and perceptual losses.
    pub fn forward_nodes(&self, g: &mut Graph<T>, x: NodeId, mode: QuantizerMode) -> Result<ForwardNodes<T>> {
        let (_, _, k_bottom) = mode.levels()?;
        let enc = self.encode_nodes(g, x)?;
        let mut quantized = Vec::new();
        let mut cb_terms = Vec::new();
        let mut commit_terms = Vec::new();
        let mut st = Vec::new();
        let branches = [
            (Branch::Top, Some(enc.z_t), 1),
            (Branch::Middle, enc.z_m, 1),
            (Branch::Bottom, enc.z_b, k_bottom),
        ];
        for (branch, z, k) in branches {
            let Some(z) = z else {
                st.push(None);
                continue;
            };
            let cb = self.params.node(g, &self.codebook_name(branch));
            let (q, nodes) = quantize_node(g, z, branch, cb, k, self.cfg.beta, self.cfg.beta_placement)?;
            quantized.push((branch, q));
            cb_terms.push(nodes.codebook_term);
            commit_terms.push(nodes.commitment_term);
            st.push(Some(nodes.straight_through));
        }
        let decoded = self.decode_nodes(g, st[0].unwrap(), st[1], st[2])?;
        let reconstruction = g.l1_loss(x, decoded.output);
        let sum = |g: &mut Graph<T>, xs: &[NodeId]| {
            let mut acc = xs[0];
            for &t in &xs[1..] {
                acc = g.add(acc, t);
            }
            acc
        };
        let codebook_terms = sum(g, &cb_terms);
        let commitment_terms = sum(g, &commit_terms);
        let vq = g.add(reconstruction, codebook_terms);
        let vq = g.add(vq, commitment_terms);
        let perceptual = perceptual_distance(&*self.perceptual, g, x, decoded.output);
        Ok(ForwardNodes {
            input: x,
            encoded: enc,
            decoded,
            quantized,
            reconstruction,
            codebook_terms,
            commitment_terms,
            vq,
            perceptual,
        })
    }

    /// Weighted objective `w_vq L_vq + w_per L_per (+ s w_adv L_adv)`, where
    /// `s` is [`MsVqgan::adversarial_scale`] at the current point. The
    /// critic's parameters are frozen inside this graph.
    pub fn objective_nodes(
        &self,
        g: &mut Graph<T>,
        f: &ForwardNodes<T>,
        disc: Option<(&PatchDiscriminator<T>, GanLoss)>,
    ) -> Objective {
        let w = self.cfg.loss_weights;
        let a = g.scale(f.vq, w.vq);
        let b = g.scale(f.perceptual, w.perceptual);
        let mut total = g.add(a, b);
        let mut adversarial = None;
        let mut adversarial_scale = None;
        if let Some((d, kind)) = disc {
            let s = self.adversarial_scale(g.value(f.input), g.value(f.decoded.head_input), d, kind);
            g.freeze_prefix(crate::gan::PREFIX);
            let logits = d.logits_node(g, f.decoded.output);
            let gl = generator_loss(g, logits, kind);
            let c = g.scale(gl, s * w.adversarial);
            total = g.add(total, c);
            adversarial = Some(gl);
            adversarial_scale = Some(s);
        }
        Objective {
            total,
            adversarial,
            adversarial_scale,
        }
    }

    /// Ratio of the gradient norms of the reconstruction loss
    /// (`w_vq L1 + w_per L_per`) and the generator term at the last decoder
    /// weight, clamped to `[0, 1e4]`. Recomputed each step and treated as a
    /// constant.
    pub fn adversarial_scale(
        &self,
        x: &Tensor<T>,
        head_input: &Tensor<T>,
        disc: &PatchDiscriminator<T>,
        kind: GanLoss,
    ) -> f64 {
        let conv = &self.arch.top_dec.head.conv;
        let w = self.cfg.loss_weights;
        let grad_norm = |adversarial: bool| {
            let mut g = Graph::new();
            let a = g.constant(head_input.clone());
            let h = conv.forward(&mut g, &self.params, a);
            let h = g.add_scalar(h, 1.0);
            let out = g.scale(h, 0.5);
            let loss = if adversarial {
                g.freeze_prefix(crate::gan::PREFIX);
                let logits = disc.logits_node(&mut g, out);
                generator_loss(&mut g, logits, kind)
            } else {
                let xn = g.constant(x.clone());
                let rec = g.l1_loss(xn, out);
                let rec = g.scale(rec, w.vq);
                let per = perceptual_distance(&*self.perceptual, &mut g, xn, out);
                let per = g.scale(per, w.perceptual);
                g.add(rec, per)
            };
            let grads = g.backward(loss);
            let id = g.param_node(conv.weight_name()).expect("head weight is registered");
            grads
                .get(id)
                .map(|t| t.data().iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt())
                .unwrap_or(0.0)
        };
        let s = grad_norm(false) / (grad_norm(true) + 1e-4);
        s.clamp(0.0, 1e4)
    }

    /// Full pass without gradients. The adversarial term is reported when a
    /// critic is supplied.
    pub fn reconstruct(
        &self,
        x: &Tensor<T>,
        mode: QuantizerMode,
        disc: Option<&PatchDiscriminator<T>>,
    ) -> Result<Reconstruction<T>> {
        let mut g = Graph::no_grad();
        let xn = g.constant(x.clone());
        let f = self.forward_nodes(&mut g, xn, mode)?;
        let obj = self.objective_nodes(&mut g, &f, disc.map(|d| (d, GanLoss::Hinge)));
        let losses = LossReport {
            reconstruction: g.scalar_value(f.reconstruction),
            codebook: g.scalar_value(f.codebook_terms),
            commitment: g.scalar_value(f.commitment_terms),
            vq: g.scalar_value(f.vq),
            perceptual: g.scalar_value(f.perceptual),
            adversarial: obj.adversarial.map(|a| g.scalar_value(a)),
            adversarial_scale: obj.adversarial_scale,
            total: g.scalar_value(obj.total),
        };
        let output = g.value(f.decoded.output).map(|v| v.max(T::ZERO).min(T::ONE));
        Ok(Reconstruction {
            output,
            losses,
            quantized: f.quantized,
        })
    }

    /// Encoder-side features only.
    pub fn encode(&self, x: &Tensor<T>) -> Result<BranchFeatures<T>> {
        let mut g = Graph::no_grad();
        let xn = g.constant(x.clone());
        let e = self.encode_nodes(&mut g, xn)?;
        Ok(BranchFeatures {
            x_m: g.value(e.x_m).clone(),
            x_b: g.value(e.x_b).clone(),
            z_t: g.value(e.z_t).clone(),
            z_m: e.z_m.map(|z| g.value(z).clone()),
            z_b: e.z_b.map(|z| g.value(z).clone()),
            xhat_m: None,
            xhat_b: None,
        })
    }

    /// All branch features, with the lateral decoder features computed from
    /// nearest-entry quantization.
    pub fn features(&self, x: &Tensor<T>) -> Result<BranchFeatures<T>> {
        let mut g = Graph::no_grad();
        let xn = g.constant(x.clone());
        let f = self.forward_nodes(&mut g, xn, QuantizerMode::Nearest)?;
        let e = f.encoded;
        Ok(BranchFeatures {
            x_m: g.value(e.x_m).clone(),
            x_b: g.value(e.x_b).clone(),
            z_t: g.value(e.z_t).clone(),
            z_m: e.z_m.map(|z| g.value(z).clone()),
            z_b: e.z_b.map(|z| g.value(z).clone()),
            xhat_m: f.decoded.xhat_m.map(|z| g.value(z).clone()),
            xhat_b: f.decoded.xhat_b.map(|z| g.value(z).clone()),
        })
    }

    /// Decodes latents to an image batch clamped to `[0, 1]`.
    pub fn decode(&self, zq_t: &Tensor<T>, zq_m: Option<&Tensor<T>>, zq_b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut g = Graph::no_grad();
        let t = g.constant(zq_t.clone());
        let m = zq_m.map(|z| g.constant(z.clone()));
        let b = zq_b.map(|z| g.constant(z.clone()));
        let d = self.decode_nodes(&mut g, t, m, b)?;
        Ok(g.value(d.output).map(|v| v.max(T::ZERO).min(T::ONE)))
    }
}

/// Architecture-relevant fields that differ between two configs, as dotted
/// paths (stage excluded).
pub fn architecture_diff(a: &MsVqganConfig, b: &MsVqganConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut cmp = |name: &str, x: String, y: String| {
        if x != y {
            out.push(format!("{name}: {x} != {y}"));
        }
    };
    cmp("base_channels", a.base_channels.to_string(), b.base_channels.to_string());
    cmp("embed_dim", a.embed_dim.to_string(), b.embed_dim.to_string());
    cmp("codebook_size", a.codebook_size.to_string(), b.codebook_size.to_string());
    cmp("res_blocks", a.res_blocks.to_string(), b.res_blocks.to_string());
    cmp("norm_groups", a.norm_groups.to_string(), b.norm_groups.to_string());
    cmp(
        "per_branch_codebooks",
        a.per_branch_codebooks.to_string(),
        b.per_branch_codebooks.to_string(),
    );
    out
}
