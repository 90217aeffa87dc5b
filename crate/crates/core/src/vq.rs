//! Codebook storage, nearest and k-th-nearest vector quantization, and the
//! codebook/commitment loss terms with their stop-gradient partition.
//!
//! Latent maps are NCHW tensors `[n, n_z, h, w]`; every `(n, y, x)` position
//! is quantized independently. Ordering uses squared Euclidean distance
//! accumulated in `f64`; ties go to the lowest entry index.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Learned set of `L` latent entries of dimension `n_z`, stored as `[L, n_z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    entries: Tensor<T>,
}

impl<T: Real> Codebook<T> {
    pub fn new(entries: Tensor<T>) -> Result<Self> {
        if entries.shape().len() != 2 {
            return Err(Error::Contract(format!(
                "codebook must be [L, n_z], got {:?}",
                entries.shape()
            )));
        }
        if entries.shape()[0] == 0 || entries.shape()[1] == 0 {
            return Err(Error::Contract(format!(
                "codebook needs L >= 1 and n_z >= 1, got {:?}",
                entries.shape()
            )));
        }
        if !entries.all_finite() {
            return Err(Error::Contract("codebook entries must be finite".into()));
        }
        Ok(Self { entries })
    }

    /// Entries drawn uniformly from `[-1/L, 1/L]`.
    pub fn init_uniform(len: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::Contract(format!(
                "codebook needs L >= 1 and n_z >= 1, got L={len}, n_z={dim}"
            )));
        }
        let b = 1.0 / len as f64;
        Self::new(Tensor::from_fn(vec![len, dim], |_| T::from_f64(rng.gen_range(-b..=b))))
    }

    pub fn len(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn entry(&self, l: usize) -> &[T] {
        let d = self.dim();
        &self.entries.data()[l * d..(l + 1) * d]
    }

    pub fn entries(&self) -> &Tensor<T> {
        &self.entries
    }

    pub fn into_entries(self) -> Tensor<T> {
        self.entries
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Top,
    Middle,
    Bottom,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Top, Branch::Middle, Branch::Bottom];

    /// Spatial compression factor of the branch's latent grid.
    pub fn compression(self) -> usize {
        match self {
            Branch::Top => 8,
            Branch::Middle => 4,
            Branch::Bottom => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Top => "top",
            Branch::Middle => "middle",
            Branch::Bottom => "bottom",
        }
    }
}

/// Encoder output of one branch, `[n, n_z, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMap<T> {
    pub values: Tensor<T>,
    pub origin: Branch,
}

impl<T: Real> LatentMap<T> {
    pub fn new(values: Tensor<T>, origin: Branch) -> Result<Self> {
        if values.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "latent map must be [n, n_z, h, w], got {:?}",
                values.shape()
            )));
        }
        if !values.all_finite() {
            return Err(Error::Contract(format!("{} latent map has non-finite values", origin.name())));
        }
        Ok(Self { values, origin })
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    /// `(n, h, w)` of the position grid.
    pub fn grid(&self) -> (usize, usize, usize) {
        let (n, _, h, w) = self.values.dims4();
        (n, h, w)
    }

    pub fn positions(&self) -> usize {
        let (n, h, w) = self.grid();
        n * h * w
    }

    /// The `n_z`-vector at flat position `p` (ordered `n`, `y`, `x`).
    pub fn vector(&self, p: usize) -> Vec<T> {
        let (_, d, h, w) = self.values.dims4();
        let hw = h * w;
        let (bi, pos) = (p / hw, p % hw);
        (0..d).map(|c| self.values.data()[(bi * d + c) * hw + pos]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationResult<T> {
    pub quantized: LatentMap<T>,
    /// Chosen entry per position, ordered `(n, y, x)`.
    pub indices: Vec<usize>,
    /// Unsquared Euclidean distance to the chosen entry per position.
    pub distances: Vec<f64>,
}

fn squared_distance<T: Real>(z: &[T], e: &[T]) -> f64 {
    z.iter()
        .zip(e)
        .map(|(&a, &b)| {
            let d = a.to_f64() - b.to_f64();
            d * d
        })
        .sum()
}

fn check_dims<T: Real>(z: &LatentMap<T>, cb: &Codebook<T>) -> Result<()> {
    if z.dim() != cb.dim() {
        return Err(Error::Contract(format!(
            "latent dimension {} does not match codebook dimension {}",
            z.dim(),
            cb.dim()
        )));
    }
    Ok(())
}

fn assemble<T: Real>(z: &LatentMap<T>, cb: &Codebook<T>, indices: Vec<usize>, distances: Vec<f64>) -> QuantizationResult<T> {
    let (n, d, h, w) = z.values.dims4();
    let hw = h * w;
    let mut q = Tensor::zeros(vec![n, d, h, w]);
    {
        let qd = q.data_mut();
        for (p, &idx) in indices.iter().enumerate() {
            let (bi, pos) = (p / hw, p % hw);
            for (c, &v) in cb.entry(idx).iter().enumerate() {
                qd[(bi * d + c) * hw + pos] = v;
            }
        }
    }
    QuantizationResult {
        quantized: LatentMap {
            values: q,
            origin: z.origin,
        },
        indices,
        distances,
    }
}

/// Replaces every latent vector by its nearest codebook entry.
pub fn nearest_quantize<T: Real>(z: &LatentMap<T>, cb: &Codebook<T>) -> Result<QuantizationResult<T>> {
    check_dims(z, cb)?;
    let positions = z.positions();
    let mut indices = Vec::with_capacity(positions);
    let mut distances = Vec::with_capacity(positions);
    for p in 0..positions {
        let v = z.vector(p);
        let mut best = 0;
        let mut best_d = squared_distance(&v, cb.entry(0));
        for l in 1..cb.len() {
            // Partial sums only grow, so a candidate can be dropped once it
            // reaches the current best (a later index never wins a tie).
            let e = cb.entry(l);
            let mut acc = 0.0;
            let mut dropped = false;
            for (&a, &b) in v.iter().zip(e) {
                let d = a.to_f64() - b.to_f64();
                acc += d * d;
                if acc >= best_d {
                    dropped = true;
                    break;
                }
            }
            if !dropped {
                best = l;
                best_d = acc;
            }
        }
        indices.push(best);
        distances.push(best_d.sqrt());
    }
    Ok(assemble(z, cb, indices, distances))
}

/// Replaces every latent vector by its `k`-th closest codebook entry
/// (1-based; `k = 1` is the nearest entry).
pub fn topk_quantize<T: Real>(z: &LatentMap<T>, cb: &Codebook<T>, k: usize) -> Result<QuantizationResult<T>> {
    check_dims(z, cb)?;
    if k < 1 || k > cb.len() {
        return Err(Error::Range(format!("k = {k} outside [1, {}]", cb.len())));
    }
    if k == 1 {
        return nearest_quantize(z, cb);
    }
    let positions = z.positions();
    let mut indices = Vec::with_capacity(positions);
    let mut distances = Vec::with_capacity(positions);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(cb.len());
    for p in 0..positions {
        let v = z.vector(p);
        scored.clear();
        scored.extend((0..cb.len()).map(|l| (squared_distance(&v, cb.entry(l)), l)));
        let (_, &mut (d, l), _) = scored.select_nth_unstable_by(k - 1, |a, b| {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        });
        indices.push(l);
        distances.push(d.sqrt());
    }
    Ok(assemble(z, cb, indices, distances))
}

/// Draws a degradation level uniformly from `[1, max_level]`.
pub fn sample_degradation_level(max_level: usize, rng: &mut impl Rng) -> Result<usize> {
    if max_level < 1 {
        return Err(Error::Range(format!("K = {max_level} must be at least 1")));
    }
    Ok(rng.gen_range(1..=max_level))
}

/// Which of the two quadratic terms carries the weight `beta`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaPlacement {
    /// `beta * ||sg[z] - z_q||^2 + ||sg[z_q] - z||^2`
    #[default]
    AsPrinted,
    /// `||sg[z] - z_q||^2 + beta * ||sg[z_q] - z||^2` (VQ-VAE convention)
    Conventional,
}

impl BetaPlacement {
    /// `(codebook weight, commitment weight)`
    pub fn weights(self, beta: f64) -> (f64, f64) {
        match self {
            BetaPlacement::AsPrinted => (beta, 1.0),
            BetaPlacement::Conventional => (1.0, beta),
        }
    }
}

/// Codebook and commitment terms on plain values (per-element means).
pub fn vq_loss_terms<T: Real>(
    z: &LatentMap<T>,
    q: &QuantizationResult<T>,
    beta: f64,
    placement: BetaPlacement,
) -> Result<(f64, f64)> {
    if z.values.shape() != q.quantized.values.shape() {
        return Err(Error::Contract(format!(
            "latent shape {:?} does not match quantized shape {:?}",
            z.values.shape(),
            q.quantized.values.shape()
        )));
    }
    let n = z.values.numel().max(1) as f64;
    let sq: f64 = z
        .values
        .data()
        .iter()
        .zip(q.quantized.values.data())
        .map(|(&a, &b)| (a.to_f64() - b.to_f64()).powi(2))
        .sum::<f64>()
        / n;
    let (wc, wm) = placement.weights(beta);
    Ok((wc * sq, wm * sq))
}

/// Graph nodes of one branch's quantization: the straight-through latent
/// fed to the decoder and the two loss terms.
pub struct QuantizedNodes {
    pub straight_through: NodeId,
    pub codebook_term: NodeId,
    pub commitment_term: NodeId,
}

/// Records the codebook term (gradient reaches only the codebook) and the
/// commitment term (gradient reaches only the encoder output) for the
/// entries selected in `q`.
pub fn vq_loss_terms_graph<T: Real>(
    g: &mut Graph<T>,
    z: NodeId,
    codebook: NodeId,
    q: &QuantizationResult<T>,
    beta: f64,
    placement: BetaPlacement,
) -> Result<(NodeId, NodeId)> {
    let (n, h, w) = q.quantized.grid();
    if g.value(z).shape() != q.quantized.values.shape() {
        return Err(Error::Contract(format!(
            "latent shape {:?} does not match quantized shape {:?}",
            g.value(z).shape(),
            q.quantized.values.shape()
        )));
    }
    let (wc, wm) = placement.weights(beta);
    let zq = g.gather_rows(codebook, &q.indices, n, h, w);
    let z_sg = g.detach(z);
    let cb = g.mse_loss(z_sg, zq);
    let cb = g.scale(cb, wc);
    let zq_sg = g.detach(zq);
    let commit = g.mse_loss(zq_sg, z);
    let commit = g.scale(commit, wm);
    Ok((cb, commit))
}

/// Forward value equals `q.quantized` exactly; gradient passes to `z` as
/// identity and never reaches the codebook.
pub fn straight_through<T: Real>(g: &mut Graph<T>, z: NodeId, q: &QuantizationResult<T>) -> Result<NodeId> {
    if g.value(z).shape() != q.quantized.values.shape() {
        return Err(Error::Contract(format!(
            "latent shape {:?} does not match quantized shape {:?}",
            g.value(z).shape(),
            q.quantized.values.shape()
        )));
    }
    Ok(g.straight_through(z, q.quantized.values.clone()))
}

/// Quantizes the graph value of `z`, then records the straight-through node
/// and both loss terms.
pub fn quantize_node<T: Real>(
    g: &mut Graph<T>,
    z: NodeId,
    origin: Branch,
    codebook: NodeId,
    k: usize,
    beta: f64,
    placement: BetaPlacement,
) -> Result<(QuantizationResult<T>, QuantizedNodes)> {
    let latent = LatentMap::new(g.value(z).clone(), origin)?;
    let cb = Codebook::new(g.value(codebook).clone())?;
    let q = topk_quantize(&latent, &cb, k)?;
    let st = straight_through(g, z, &q)?;
    let (codebook_term, commitment_term) = vq_loss_terms_graph(g, z, codebook, &q, beta, placement)?;
    Ok((
        q,
        QuantizedNodes {
            straight_through: st,
            codebook_term,
            commitment_term,
        },
    ))
}
