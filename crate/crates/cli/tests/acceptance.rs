//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p vqd-cli --test acceptance -- 1 9`.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use common::{ok, s, write_json};
use vqd_core::autograd::{Graph, KinkPattern};
use vqd_core::dataset::{synth_clips, ClipManifest, SynthConfig};
use vqd_core::degrade::*;
use vqd_core::eval::*;
use vqd_core::gan::{discriminator_loss, generator_loss, GanLoss, PatchDiscriminator};
use vqd_core::perceptual::{perceptual_distance, RandomPyramid};
use vqd_core::resample::{downscale, upscale, ResizeMethod};
use vqd_core::vq::*;
use vqd_core::vqgan::*;
use vqd_core::vsr::*;
use vqd_core::{Clip, Frame, Tensor};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_images<T: vqd_core::Real>(n: usize, side: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(vec![n, 3, side, side], |_| T::from_f64(rng.gen()))
}

fn synth_frames(n: usize, seed: u64) -> Vec<Frame> {
    let cfg = SynthConfig {
        clips: n,
        frames_per_clip: 1,
        ..Default::default()
    };
    synth_clips(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap()
        .into_iter()
        .map(|c| c.frames[0].clone())
        .collect()
}

/// Sets the zero-initialized lateral producers to small random values so
/// every branch reaches the output.
fn wake_laterals<T: vqd_core::Real>(m: &mut MsVqgan<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = m.params.names().map(String::from).collect();
    for n in names {
        if n.starts_with("middle.") || n.starts_with("bottom.") {
            for v in m.params.get_mut(&n).unwrap().data_mut() {
                if *v == T::ZERO {
                    *v = T::from_f64(rng.gen_range(-0.05..0.05));
                }
            }
        }
    }
}

// 1 -----------------------------------------------------------------------

fn quantization_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cb = Codebook::<f32>::init_uniform(1024, 256, &mut rng).unwrap();
    let z = LatentMap::new(
        Tensor::from_fn(vec![1, 256, 100, 100], |_| rng.gen_range(-1.0f32..1.0)),
        Branch::Bottom,
    )
    .unwrap();
    let k = 7;
    let t0 = Instant::now();
    let near = nearest_quantize(&z, &cb).unwrap();
    let topk = topk_quantize(&z, &cb, k).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();

    let mut mismatches = 0;
    for p in 0..z.positions() {
        let v = z.vector(p);
        let d: Vec<f64> = (0..cb.len())
            .map(|l| {
                v.iter()
                    .zip(cb.entry(l))
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum()
            })
            .collect();
        // linear scan, first minimum wins
        let mut best = 0;
        for l in 1..d.len() {
            if d[l] < d[best] {
                best = l;
            }
        }
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
        if near.indices[p] != best || topk.indices[p] != order[k - 1] {
            mismatches += 1;
        }
    }
    ensure!(mismatches == 0, "{mismatches} of 10000 queries disagree with the oracles");
    ensure!(elapsed < 60.0, "quantization took {elapsed:.1} s");
    Ok(format!("10000 queries exact, nearest + top-{k} in {elapsed:.1} s"))
}

// 2 -----------------------------------------------------------------------

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Per branch: latent, quantized value, their difference and the chosen
/// indices, all at the base point.
type Frozen = Vec<(Branch, Tensor<f64>, Tensor<f64>, Tensor<f64>, Vec<usize>)>;

fn freeze(m: &MsVqgan<f64>, x: &Tensor<f64>) -> Frozen {
    let mut g = Graph::no_grad();
    let xn = g.constant(x.clone());
    let f = m.forward_nodes(&mut g, xn, QuantizerMode::Nearest).unwrap();
    let zs = [Some(f.encoded.z_t), f.encoded.z_m, f.encoded.z_b];
    f.quantized
        .iter()
        .zip(zs.iter().flatten())
        .map(|((b, q), z)| {
            let z0 = g.value(*z).clone();
            let q0 = q.quantized.values.clone();
            let off = q0.zip_map(&z0, |a, b| a - b);
            (*b, z0, q0, off, q.indices.clone())
        })
        .collect()
}

/// Records the piecewise-linear branches on the first pass and replays them
/// afterwards, so a perturbed pass cannot cross a kink.
fn pin(g: &mut Graph<f64>, kinks: Option<&KinkPattern<f64>>) {
    match kinks {
        Some(p) => g.replay_kinks(p.clone()),
        None => g.record_kinks(),
    }
}

/// The objective with every stop-gradient and quantizer choice pinned to
/// its base-point value; its derivative is what the straight-through
/// backward pass computes.
fn surrogate(m: &MsVqgan<f64>, x: &Tensor<f64>, fr: &Frozen, disc: Option<(&PatchDiscriminator<f64>, f64)>, kinks: &mut Option<KinkPattern<f64>>) -> f64 {
    let cfg = m.config();
    let mut g = Graph::no_grad();
    pin(&mut g, kinks.as_ref());
    let xn = g.constant(x.clone());
    let enc = m.encode_nodes(&mut g, xn).unwrap();
    let zs = [Some(enc.z_t), enc.z_m, enc.z_b];
    let (wc, wm) = cfg.beta_placement.weights(cfg.beta);
    let mut st = Vec::new();
    let mut terms = Vec::new();
    for ((branch, z0, q0, off, idx), z) in fr.iter().zip(zs.iter().flatten()) {
        let o = g.constant(off.clone());
        st.push(g.add(*z, o));
        let cb = m.params.node(&mut g, &m.codebook_name(*branch));
        let (n, _, h, w) = q0.dims4();
        let e = g.gather_rows(cb, idx, n, h, w);
        let zc = g.constant(z0.clone());
        let a = g.mse_loss(zc, e);
        terms.push(g.scale(a, wc));
        let ec = g.constant(q0.clone());
        let b = g.mse_loss(ec, *z);
        terms.push(g.scale(b, wm));
    }
    let dec = m.decode_nodes(&mut g, st[0], st.get(1).copied(), st.get(2).copied()).unwrap();
    let mut vq = g.l1_loss(xn, dec.output);
    for t in terms {
        vq = g.add(vq, t);
    }
    let per = perceptual_distance(&RandomPyramid::<f64>::new(cfg.perceptual_seed), &mut g, xn, dec.output);
    let w = cfg.loss_weights;
    let a = g.scale(vq, w.vq);
    let b = g.scale(per, w.perceptual);
    let mut total = g.add(a, b);
    if let Some((d, scale)) = disc {
        let l = d.logits_node(&mut g, dec.output);
        let gl = generator_loss(&mut g, l, GanLoss::Hinge);
        let c = g.scale(gl, scale * w.adversarial);
        total = g.add(total, c);
    }
    if kinks.is_none() {
        *kinks = Some(g.take_kinks());
    }
    g.scalar_value(total)
}

fn generator_fd(mut m: MsVqgan<f64>, disc: Option<&PatchDiscriminator<f64>>, seed: u64) -> Result<f64, String> {
    let x = random_images::<f64>(1, 32, seed);
    let fr = freeze(&m, &x);
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let f = m.forward_nodes(&mut g, xn, QuantizerMode::Nearest).unwrap();
    let obj = m.objective_nodes(&mut g, &f, disc.map(|d| (d, GanLoss::Hinge)));
    let grads = g.backward(obj.total);
    let grads: HashMap<String, Tensor<f64>> = grads
        .params(&g)
        .filter_map(|(n, t)| t.map(|t| (n.to_string(), t.clone())))
        .collect();
    let disc = disc.map(|d| (d, obj.adversarial_scale.unwrap()));
    let mut kinks = None;
    let base = surrogate(&m, &x, &fr, disc, &mut kinks);
    let total = g.scalar_value(obj.total);
    ensure!((base - total).abs() < 1e-12, "surrogate {base} differs from objective {total}");
    let all: Vec<(String, usize)> = m
        .params
        .iter()
        .flat_map(|(n, t)| (0..t.numel()).map(move |i| (n.to_string(), i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (name, i) = all[rng.gen_range(0..all.len())].clone();
        let orig = m.params.get(&name).unwrap().data()[i];
        m.params.get_mut(&name).unwrap().data_mut()[i] = orig + FD_STEP;
        let up = surrogate(&m, &x, &fr, disc, &mut kinks);
        m.params.get_mut(&name).unwrap().data_mut()[i] = orig - FD_STEP;
        let down = surrogate(&m, &x, &fr, disc, &mut kinks);
        m.params.get_mut(&name).unwrap().data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = grads.get(&name).map(|t| t.data()[i]).unwrap_or(0.0);
        let e = rel_err(a, numeric);
        ensure!(e < REL_TOL, "{name}[{i}]: analytic {a:e}, numeric {numeric:e}");
        worst = worst.max(e);
    }
    Ok(worst)
}

fn critic_fd(seed: u64) -> Result<f64, String> {
    let cfg = MsVqganConfig::tiny().discriminator;
    let mut d = PatchDiscriminator::<f64>::new(cfg, seed).unwrap();
    let real = random_images::<f64>(1, 32, seed + 1);
    let fake = random_images::<f64>(1, 32, seed + 2);
    let loss = |d: &PatchDiscriminator<f64>, kinks: Option<&KinkPattern<f64>>| {
        let mut g = Graph::new();
        pin(&mut g, kinks);
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let lr = d.logits_node(&mut g, r);
        let lf = d.logits_node(&mut g, f);
        let (a, b) = discriminator_loss(&mut g, lr, lf, GanLoss::Hinge);
        let t = g.add(a, b);
        (g, t)
    };
    let (mut g, t) = loss(&d, None);
    let kinks = g.take_kinks();
    let grads = g.backward(t);
    let map: HashMap<String, Tensor<f64>> = grads
        .params(&g)
        .filter_map(|(n, t)| t.map(|t| (n.to_string(), t.clone())))
        .collect();
    let all: Vec<(String, usize)> = d
        .params
        .iter()
        .flat_map(|(n, t)| (0..t.numel()).map(move |i| (n.to_string(), i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (name, i) = all[rng.gen_range(0..all.len())].clone();
        let orig = d.params.get(&name).unwrap().data()[i];
        d.params.get_mut(&name).unwrap().data_mut()[i] = orig + FD_STEP;
        let (g1, t1) = loss(&d, Some(&kinks));
        d.params.get_mut(&name).unwrap().data_mut()[i] = orig - FD_STEP;
        let (g2, t2) = loss(&d, Some(&kinks));
        d.params.get_mut(&name).unwrap().data_mut()[i] = orig;
        let numeric = (g1.scalar_value(t1) - g2.scalar_value(t2)) / (2.0 * FD_STEP);
        let a = map.get(&name).map(|t| t.data()[i]).unwrap_or(0.0);
        let e = rel_err(a, numeric);
        ensure!(e < REL_TOL, "critic {name}[{i}]: analytic {a:e}, numeric {numeric:e}");
        worst = worst.max(e);
    }
    Ok(worst)
}

fn gradient_correctness() -> Outcome {
    let cfg = MsVqganConfig::tiny();
    let s1 = MsVqgan::<f32>::new(cfg.clone(), 21).unwrap();
    let e1 = generator_fd(s1.cast::<f64>(), None, 22)?;
    let mut s2 = MsVqgan::load_stage1(&s1, cfg.clone(), 23).unwrap().cast::<f64>();
    wake_laterals(&mut s2, 24);
    let d = PatchDiscriminator::<f64>::new(cfg.discriminator, 25).unwrap();
    let e2 = generator_fd(s2, Some(&d), 26)?;
    let e3 = critic_fd(27)?;
    Ok(format!(
        "worst relative error: reconstruction+vq+perceptual {e1:.1e}, with generator term {e2:.1e}, critic {e3:.1e}"
    ))
}

// 3 -----------------------------------------------------------------------

fn stop_gradient_partition() -> Outcome {
    let cfg = MsVqganConfig::tiny();
    let s1 = MsVqgan::<f32>::new(cfg.clone(), 31).unwrap();
    let mut m = MsVqgan::load_stage1(&s1, cfg, 32).unwrap().cast::<f64>();
    wake_laterals(&mut m, 33);
    let x = random_images::<f64>(1, 64, 34);
    let mut g = Graph::new();
    let xn = g.constant(x);
    let f = m.forward_nodes(&mut g, xn, QuantizerMode::Nearest).unwrap();
    let zs: Vec<_> = [Some(f.encoded.z_t), f.encoded.z_m, f.encoded.z_b].into_iter().flatten().collect();
    let codebooks: Vec<String> = Branch::ALL.iter().map(|b| m.codebook_name(*b)).collect();

    let gc = g.backward(f.codebook_terms);
    for &z in &zs {
        ensure!(gc.get_or_zeros(&g, z).data().iter().all(|&v| v == 0.0), "codebook term reached an encoder output");
    }
    let mut codebook_live = false;
    for (name, t) in gc.params(&g) {
        let nonzero = t.is_some_and(|t| t.data().iter().any(|&v| v != 0.0));
        if codebooks.iter().any(|c| c == name) {
            codebook_live |= nonzero;
        } else {
            ensure!(!nonzero, "codebook term reached {name}");
        }
    }
    ensure!(codebook_live, "codebook term carries no gradient at all");

    let gm = g.backward(f.commitment_terms);
    let mut encoder_live = false;
    for (name, t) in gm.params(&g) {
        let nonzero = t.is_some_and(|t| t.data().iter().any(|&v| v != 0.0));
        if codebooks.iter().any(|c| c == name) {
            ensure!(!nonzero, "commitment term reached codebook {name}");
        } else {
            encoder_live |= nonzero;
        }
    }
    ensure!(encoder_live, "commitment term carries no gradient at all");
    Ok(format!("3 branches: codebook term -> codebooks only, commitment term -> encoder only"))
}

// 4 -----------------------------------------------------------------------

fn stage_handoff() -> Outcome {
    let mut cfg = MsVqganConfig::tiny();
    cfg.stage1.steps = 20;
    let data = synth_frames(4, 41);
    let s1 = train_stage1(&data, &cfg, &mut ChaCha8Rng::seed_from_u64(42), &mut ()).unwrap().model;
    let s2 = MsVqgan::load_stage1(&s1, cfg, 43).unwrap();
    let mut worst = 0.0f64;
    for i in 0..10 {
        let x = random_images::<f32>(1, 64, 400 + i);
        let a = s1.reconstruct(&x, QuantizerMode::Nearest, None).unwrap();
        let b = s2.reconstruct(&x, QuantizerMode::Nearest, None).unwrap();
        worst = worst.max(a.output.max_abs_diff(&b.output));
    }
    ensure!(worst <= 1e-6, "max abs difference {worst:e}");
    Ok(format!("10 inputs, max abs difference {worst:e}"))
}

// 5 -----------------------------------------------------------------------

fn shape_sweep() -> Outcome {
    let mut checked = 0;
    for base in [MsVqganConfig::tiny(), MsVqganConfig::paper()] {
        let cfg = base.with_stage(Stage::Stage2);
        let (c, nz) = (cfg.base_channels, cfg.embed_dim);
        let m = MsVqgan::<f32>::new(cfg, 51).unwrap();
        for side in [64, 128, 256] {
            let x = random_images::<f32>(1, side, side as u64);
            let f = m.features(&x).unwrap();
            let want: [(&Tensor<f32>, [usize; 4]); 7] = [
                (&f.x_b, [1, c, side / 2, side / 2]),
                (&f.x_m, [1, 2 * c, side / 4, side / 4]),
                (&f.z_t, [1, nz, side / 8, side / 8]),
                (f.z_m.as_ref().unwrap(), [1, nz, side / 4, side / 4]),
                (f.z_b.as_ref().unwrap(), [1, nz, side / 2, side / 2]),
                (f.xhat_m.as_ref().unwrap(), [1, 2 * c, side / 4, side / 4]),
                (f.xhat_b.as_ref().unwrap(), [1, c, side / 2, side / 2]),
            ];
            for (i, (t, shape)) in want.iter().enumerate() {
                ensure!(t.shape() == shape, "C={c} {side}px tensor {i}: {:?} != {shape:?}", t.shape());
            }
            let out = m.decode(&f.z_t, f.z_m.as_ref(), f.z_b.as_ref()).unwrap();
            ensure!(out.shape() == [1, 3, side, side], "C={c} {side}px decode {:?}", out.shape());
            checked += 1;
        }
    }
    let paper = MsVqgan::<f32>::new(MsVqganConfig::paper().with_stage(Stage::Stage2), 52).unwrap();
    Ok(format!(
        "{checked} (config, size) cases; paper-scale model has {} parameters",
        paper.params.num_elements()
    ))
}

// 6 -----------------------------------------------------------------------

fn psnr_tensor(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| ((*x - *y) as f64).powi(2)).sum::<f64>() / a.numel() as f64;
    10.0 * (1.0 / mse).log10()
}

struct OverfitProbe {
    batch: Tensor<f32>,
    best: f64,
    reached: Option<usize>,
}

impl TrainObserver for OverfitProbe {
    fn snapshot_every(&self) -> usize {
        200
    }

    fn on_snapshot(&mut self, t: &VqganTrainer) -> vqd_core::Result<()> {
        let r = t.model.reconstruct(&self.batch, QuantizerMode::Nearest, None)?;
        let p = psnr_tensor(&r.output, &self.batch);
        self.best = self.best.max(p);
        if p >= 30.0 && self.reached.is_none() {
            self.reached = Some(t.step);
        }
        Ok(())
    }

    fn on_step(&mut self, _rec: &StepRecord) -> vqd_core::Result<Control> {
        Ok(if self.reached.is_some() { Control::Stop } else { Control::Continue })
    }
}

fn toy_overfit() -> Outcome {
    let data = synth_frames(8, 1);
    let mut cfg = MsVqganConfig::tiny();
    cfg.stage1.steps = 20_000;
    cfg.stage1.base_lr = 1e-3;
    let batch = Tensor::stack_batch(&data.iter().map(|f| f.to_tensor::<f32>()).collect::<Vec<_>>());
    let mut probe = OverfitProbe {
        batch,
        best: f64::NEG_INFINITY,
        reached: None,
    };
    let t0 = Instant::now();
    let mut trainer = VqganTrainer::new(MsVqgan::new(cfg.clone(), 3).unwrap(), 4).unwrap();
    trainer.run(&data, cfg.stage1.steps, &mut ChaCha8Rng::seed_from_u64(1), &mut probe).unwrap();
    let mins = t0.elapsed().as_secs_f64() / 60.0;
    match probe.reached {
        Some(step) if mins <= 30.0 => Ok(format!("30 dB at step {step} after {mins:.1} min")),
        Some(step) => Err(format!("30 dB at step {step} but took {mins:.1} min")),
        None => Err(format!("best {:.2} dB after 20000 steps", probe.best)),
    }
}

// 7 -----------------------------------------------------------------------

fn degradation_pipeline() -> Outcome {
    let mut cfg = MsVqganConfig::tiny().with_stage(Stage::Stage2);
    cfg.codebook_size = 64;
    let mut model = MsVqgan::<f32>::new(cfg, 71).unwrap();
    wake_laterals(&mut model, 72);
    let hr = synth_clips(
        &SynthConfig {
            clips: 1,
            size: 64,
            frames_per_clip: 3,
            ..Default::default()
        },
        &mut ChaCha8Rng::seed_from_u64(73),
    )
    .unwrap()
    .remove(0);
    let deg = DegradationConfig::default();
    let (lr, d) = degrade_clip_traced(&hr, &deg, Some(&model), &mut clip_rng(74, "a")).unwrap();
    let want = vec![StageKind::Blur, StageKind::Noise, StageKind::Down, StageKind::Vqd, StageKind::Compress];
    ensure!(d.trace == want, "trace {:?}", d.trace);

    // chi-square over 50 levels, 49 degrees of freedom, alpha 0.01
    let mut counts = [0u64; 50];
    let mut rng = ChaCha8Rng::seed_from_u64(75);
    for _ in 0..100_000 {
        counts[sample_degradation_level(50, &mut rng).unwrap() - 1] += 1;
    }
    let e = 100_000.0 / 50.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    ensure!(chi2 < 74.919, "chi-square {chi2:.2} exceeds 74.919");

    let f = &lr.frames[0];
    let a = vq_degrade_at_level(f, &model, 1).unwrap();
    let r = model.reconstruct(&f.to_tensor(), QuantizerMode::Nearest, None).unwrap();
    ensure!(a == Frame::from_tensor(&r.output, 0).unwrap(), "level 1 differs from nearest reconstruction");

    let (again, _) = degrade_clip_traced(&hr, &deg, Some(&model), &mut clip_rng(74, "a")).unwrap();
    let bytes = |c: &Clip| c.frames.iter().flat_map(|f| f.to_rgb8()).collect::<Vec<u8>>();
    ensure!(bytes(&again) == bytes(&lr), "same seed gave different clips");
    Ok(format!("trace ok, chi-square {chi2:.2} < 74.919, level 1 bit-exact, seeded clips byte-identical"))
}

// 8 -----------------------------------------------------------------------

fn live_vsr(seed: u64) -> VsrNet {
    let mut net = VsrNet::new(VsrConfig::tiny(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for name in ["vsr.out.weight", "vsr.out.bias"] {
        for v in net.params.get_mut(name).unwrap().data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    net
}

fn random_clip(n: usize, side: usize, seed: u64) -> Clip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Clip::new((0..n).map(|_| Frame::from_fn(side, side, |_, _, _| rng.gen())).collect()).unwrap()
}

/// Mean L1 of the network on a fixed set of windows, recorded at every
/// snapshot.
struct L1Probe {
    samples: Vec<VsrSample>,
    history: Vec<(usize, f64)>,
}

impl VsrObserver for L1Probe {
    fn snapshot_every(&self) -> usize {
        100
    }

    fn on_snapshot(&mut self, t: &VsrTrainer) -> vqd_core::Result<()> {
        let mut sum = 0.0;
        let mut n = 0;
        for s in &self.samples {
            let sr = t.net.sr_clip(&s.lr)?;
            for (a, b) in sr.frames.iter().zip(&s.hr.frames) {
                sum += a.mean_abs_diff(b)?;
                n += 1;
            }
        }
        self.history.push((t.step, sum / n as f64));
        Ok(())
    }
}

fn bicubic_only() -> DegradationConfig {
    let mut d = DegradationConfig::default();
    d.blur.sigma = [0.0, 0.0];
    d.noise.sigma = [0.0, 0.0];
    d.down.methods = vec![ResizeMethod::Bicubic];
    d.compress.quality = [100, 100];
    d.vqd.enable = false;
    d
}

fn vsr_contracts() -> Outcome {
    let net = live_vsr(81);
    let lr = random_clip(20, 16, 82);
    let sr = net.sr_clip(&lr).unwrap();
    ensure!(sr.len() == 20 && sr.dims() == Some((64, 64)), "x4 law: {:?}", sr.dims());

    let mut stream = SrStream::new(&net);
    let mut streamed = Vec::new();
    for f in &lr.frames {
        streamed.extend(stream.push(f.clone()).unwrap());
    }
    streamed.extend(stream.finish().unwrap());
    let mut g = Graph::no_grad();
    let tensors: Vec<_> = lr.frames.iter().map(|f| f.to_tensor::<f32>()).collect();
    let nodes = net.unroll_nodes(&mut g, &tensors).unwrap();
    for (t, &id) in nodes.iter().enumerate() {
        let batch = Frame::from_tensor(&g.value(id).map(|v| v.clamp(0.0, 1.0)), 0).unwrap();
        ensure!(batch == streamed[t], "streaming and unrolled outputs differ at frame {t}");
    }

    for t in 0..18 {
        let mut p = lr.clone();
        for v in p.frames[t + 2].data_mut() {
            *v = 1.0 - *v;
        }
        let out = net.sr_clip(&p).unwrap();
        ensure!(out.frames[..=t] == sr.frames[..=t], "frame {} changed outputs up to {t}", t + 2);
    }

    let mut zero = live_vsr(83);
    zero.zero_residual_head();
    for f in zero.sr_clip(&lr).unwrap().frames.iter().zip(&lr.frames) {
        ensure!(*f.0 == upscale(f.1, 4, ResizeMethod::Bicubic).unwrap().clamp01(), "zero head is not bicubic");
    }

    let cfg = VsrConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hr = synth_clips(
        &SynthConfig {
            clips: 8,
            size: 128,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let deg = bicubic_only();
    let mut prng = ChaCha8Rng::seed_from_u64(99);
    let samples = (0..8)
        .map(|_| {
            let hr = sample_hr_window(&hr, &cfg, &mut prng).unwrap();
            let lr = degrade_clip(&hr, &deg, None, &mut prng).unwrap();
            VsrSample { lr, hr }
        })
        .collect();
    let mut probe = L1Probe {
        samples,
        history: Vec::new(),
    };
    let setup = VsrTrainSetup {
        stage: 1,
        cfg: &cfg,
        degradation: &deg,
        degradation_model: None,
        init: None,
        seed: 3,
        workers: 1,
    };
    train_vsr(&hr, &setup, &mut probe).unwrap();
    let at = |step| probe.history.iter().find(|h| h.0 == step).map(|h| h.1);
    let (early, late) = (at(100).unwrap(), at(cfg.stage1.steps).unwrap());
    ensure!(late <= 0.5 * early, "probe L1 {late:.5} at 3000 vs {early:.5} at 100");
    Ok(format!(
        "x4, stream == unroll on 20 frames, causal, zero head == bicubic; probe L1 {early:.5} -> {late:.5} ({:.2}x)",
        late / early
    ))
}

// 9 -----------------------------------------------------------------------

fn to_u8(v: f32) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() as f64
}

fn naive_psnr(a: &Frame, b: &Frame) -> f64 {
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (to_u8(x) - to_u8(y)).powi(2)).sum::<f64>() / n;
    10.0 * (255.0 * 255.0 / mse).log10()
}

fn naive_ssim(a: &Frame, b: &Frame) -> f64 {
    let (h, w) = a.dims();
    let luma = |f: &Frame, y, x| 0.299 * to_u8(f.get(0, y, x)) + 0.587 * to_u8(f.get(1, y, x)) + 0.114 * to_u8(f.get(2, y, x));
    let mut win = [[0.0f64; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-(((i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2)) / 4.5)).exp();
            norm += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut sum = 0.0;
    let mut count = 0.0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let mut m = [0.0f64; 5];
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j] / norm;
                    let (p, q) = (luma(a, y0 + i, x0 + j), luma(b, y0 + i, x0 + j));
                    m[0] += k * p;
                    m[1] += k * q;
                    m[2] += k * p * p;
                    m[3] += k * q * q;
                    m[4] += k * p * q;
                }
            }
            let (vx, vy, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
            sum += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2) / ((m[0] * m[0] + m[1] * m[1] + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    sum / count
}

fn metrics() -> Outcome {
    let a = Frame::filled(32, 32, [40.0 / 255.0; 3]);
    let b = Frame::filled(32, 32, [50.0 / 255.0; 3]);
    let closed = 20.0 * (255.0f64 / 10.0).log10();
    let p = psnr(&a, &b).unwrap();
    ensure!((p - closed).abs() < 1e-6, "closed form: {p} vs {closed}");
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut worst_p = 0.0f64;
    let mut worst_s = 0.0f64;
    for _ in 0..50 {
        let x = Frame::from_fn(24, 20, |_, _, _| rng.gen());
        let y = Frame::from_fn(24, 20, |c, r, q| (x.get(c, r, q) + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0));
        ensure!(ssim(&x, &x).unwrap() == 1.0, "SSIM identity is not 1");
        worst_p = worst_p.max((psnr(&x, &y).unwrap() - naive_psnr(&x, &y)).abs());
        worst_s = worst_s.max((ssim(&x, &y).unwrap() - naive_ssim(&x, &y)).abs());
    }
    ensure!(worst_p < 1e-6 && worst_s < 1e-6, "reference gaps: psnr {worst_p:e}, ssim {worst_s:e}");
    Ok(format!("closed form {p:.4} dB; 50 pairs, worst gap psnr {worst_p:.1e}, ssim {worst_s:.1e}"))
}

// 10 ----------------------------------------------------------------------

fn protocol_counts() -> Outcome {
    let clip = Clip::new(vec![Frame::filled(232, 240, [0.3; 3]); 100]).unwrap();
    let calls = std::sync::atomic::AtomicUsize::new(0);
    let scorer = |c: &Frame| -> vqd_core::Result<f64> {
        assert_eq!(c.dims(), (224, 224));
        calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        Ok(0.5)
    };
    let cfg = EvalProtocolConfig::default();
    let r = nr_iqa_protocol(&clip, &scorer, &cfg).unwrap();
    let total = calls.into_inner();
    ensure!(r.frames.len() == 10, "{} frames", r.frames.len());
    ensure!(r.scorer_calls_per_repetition == 200, "{} calls per repetition", r.scorer_calls_per_repetition);
    ensure!(r.per_repetition.len() == 3 && total == 600, "{} repetitions, {total} calls", r.per_repetition.len());
    ensure!(r.mean == 0.5, "constant scorer gave {}", r.mean);
    let c = nr_iqa_protocol(&random_clip(100, 224, 101), &ConstantScorer(0.25), &cfg).unwrap();
    ensure!(c.mean == 0.25, "constant scorer gave {}", c.mean);
    Ok("10 frames, 200 calls per repetition, 3 repetitions, constant preserved".into())
}

// 11 ----------------------------------------------------------------------

fn end_to_end() -> Outcome {
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // the test split is made by bicubic downsampling, so the VSR stage
    // learns that same degradation
    let cfg = write_json(
        &dir.join("config.json"),
        &json!({
            "version": 1,
            "preset": "tiny",
            "seed": 11,
            "degradation": {
                "blur": {"sigma": [0.0, 0.0]},
                "noise": {"sigma": [0.0, 0.0]},
                "down": {"methods": ["bicubic"]},
                "compress": {"quality": [100, 100]}
            }
        }),
    );
    let data = dir.join("data");
    let manifest = data.join("manifest.json");
    let run = |args: &[&str]| {
        ok(args);
        println!("    {} done at {:.1} min", args[0], t0.elapsed().as_secs_f64() / 60.0);
    };
    run(&["synth-data", "--config", s(&cfg), "--out", s(&data)]);
    run(&["train-degradation", "--stage", "1", "--config", s(&cfg), "--data", s(&manifest), "--out", s(&dir.join("deg1.ckpt"))]);
    run(&[
        "train-degradation", "--stage", "2", "--config", s(&cfg), "--data", s(&manifest),
        "--init", s(&dir.join("deg1.ckpt")), "--out", s(&dir.join("deg2.ckpt")),
    ]);
    run(&["train-vsr", "--stage", "1", "--config", s(&cfg), "--data", s(&manifest), "--out", s(&dir.join("vsr1.ckpt"))]);
    let test_lr = data.join("test-lr/manifest.json");
    run(&[
        "upscale", "--config", s(&cfg), "--model", s(&dir.join("vsr1.ckpt")), "--in", s(&test_lr),
        "--out", s(&dir.join("sr")),
    ]);
    run(&[
        "eval", "--config", s(&cfg), "--metric", "psnr", "--manifest", s(&dir.join("sr/manifest.json")),
        "--reference", s(&manifest), "--report", s(&dir.join("report.csv")),
    ]);
    let mins = t0.elapsed().as_secs_f64() / 60.0;
    ensure!(Path::new(&dir.join("deg2.ckpt")).is_file(), "stage-2 degradation checkpoint missing");

    let rows = read_report(dir.join("report.csv")).unwrap();
    let sr = rows.iter().find(|r| r.clip_id == "mean").ok_or("report has no mean row")?.value;

    let lr_m = ClipManifest::load(&test_lr).unwrap();
    let hr_m = ClipManifest::load(&manifest).unwrap();
    let mut bicubic = Vec::new();
    for e in &lr_m.clips {
        let lr = lr_m.load_clip(e).unwrap();
        let hr = hr_m.load_clip(hr_m.clips.iter().find(|c| c.id == e.id).unwrap()).unwrap();
        let up = Clip::new(lr.frames.iter().map(|f| upscale(f, 4, ResizeMethod::Bicubic).unwrap()).collect()).unwrap();
        bicubic.push(clip_mean(&up, &hr, psnr).unwrap());
        // the LR split really is the bicubic x4 reduction of the HR split
        let again = downscale(&hr.frames[0], 4, ResizeMethod::Bicubic).unwrap().quantized_8bit();
        ensure!(again == lr.frames[0], "test LR for {} is not bicubic x4", e.id);
    }
    let bi = bicubic.iter().sum::<f64>() / bicubic.len() as f64;
    ensure!(mins < 60.0, "pipeline took {mins:.1} min");
    ensure!(sr > bi, "VSR {sr:.3} dB is not above bicubic {bi:.3} dB");
    Ok(format!("{mins:.1} min; test PSNR VSR {sr:.3} dB vs bicubic {bi:.3} dB"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "quantization oracles", quantization_oracles),
        (2, "gradient correctness", gradient_correctness),
        (3, "stop-gradient partition", stop_gradient_partition),
        (4, "stage hand-off", stage_handoff),
        (5, "architecture shape sweep", shape_sweep),
        (6, "toy overfit", toy_overfit),
        (7, "degradation pipeline", degradation_pipeline),
        (8, "vsr contracts", vsr_contracts),
        (9, "metrics", metrics),
        (10, "nr-iqa protocol counts", protocol_counts),
        (11, "end-to-end tiny pipeline", end_to_end),
    ];
    // libtest-style flags from `cargo test` are ignored; bare numbers select
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
