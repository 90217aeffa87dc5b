use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::VsrConfig;
use super::net::VsrNet;
use crate::autograd::Graph;
use crate::degrade::{degrade_clip, DegradationConfig};
use crate::error::{Error, Result};
use crate::frame::Clip;
use crate::gan::{discriminator_step, generator_loss, AdversarialLosses, PatchDiscriminator};
use crate::nn::{Adam, AdamConfig};
use crate::perceptual::{perceptual_distance, FeatureExtractor, RandomPyramid};
use crate::tensor::Tensor;
use crate::vqgan::{Control, MsVqgan, Stage};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VsrLosses {
    pub l1: f64,
    pub perceptual: Option<f64>,
    pub gan: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VsrStepRecord {
    pub stage: u8,
    pub step: usize,
    pub losses: VsrLosses,
    pub discriminator: Option<AdversarialLosses>,
    pub lr: f64,
    pub elapsed_ms: u64,
}

pub trait VsrObserver {
    fn on_step(&mut self, _rec: &VsrStepRecord) -> Result<Control> {
        Ok(Control::Continue)
    }

    fn snapshot_every(&self) -> usize {
        0
    }

    fn on_snapshot(&mut self, _trainer: &VsrTrainer) -> Result<()> {
        Ok(())
    }

    fn on_failure(&mut self, _trainer: &VsrTrainer, _detail: &str) -> Result<()> {
        Ok(())
    }
}

impl VsrObserver for () {}

/// One training sample: aligned LR and HR frame sequences.
#[derive(Clone, Debug)]
pub struct VsrSample {
    pub lr: Clip,
    pub hr: Clip,
}

/// Random `clip_len`-frame, `crop_size`-square window of a random clip.
pub fn sample_hr_window(clips: &[Clip], cfg: &VsrConfig, rng: &mut impl Rng) -> Result<Clip> {
    if clips.is_empty() {
        return Err(Error::Empty("no HR training clips".into()));
    }
    let clip = &clips[rng.gen_range(0..clips.len())];
    let (h, w) = clip.dims().ok_or_else(|| Error::Empty("HR clip has no frames".into()))?;
    if clip.len() < cfg.clip_len {
        return Err(Error::Shape(format!(
            "HR clip has {} frames, fewer than clip_len {}",
            clip.len(),
            cfg.clip_len
        )));
    }
    let c = cfg.crop_size;
    if h < c || w < c {
        return Err(Error::Shape(format!("HR frames {w}x{h} are smaller than crop {c}")));
    }
    let t0 = rng.gen_range(0..=clip.len() - cfg.clip_len);
    let top = rng.gen_range(0..=h - c);
    let left = rng.gen_range(0..=w - c);
    Clip::new(
        clip.frames[t0..t0 + cfg.clip_len]
            .iter()
            .map(|f| f.crop(top, left, c, c))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Degradation config actually used for a VSR stage: the learned stage is
/// switched off in stage 1.
pub fn stage_degradation(stage: u8, cfg: &DegradationConfig) -> DegradationConfig {
    if stage == 1 {
        cfg.clone().basic_only()
    } else {
        cfg.clone()
    }
}

fn stack_time(clips: &[&Clip], t: usize) -> Tensor<f32> {
    Tensor::stack_batch(&clips.iter().map(|c| c.frames[t].to_tensor()).collect::<Vec<_>>())
}

pub struct VsrTrainer {
    pub net: VsrNet,
    pub disc: Option<PatchDiscriminator<f32>>,
    pub stage: u8,
    pub step: usize,
    opt: Adam<f32>,
    disc_opt: Option<Adam<f32>>,
    perceptual: Arc<dyn FeatureExtractor<f32>>,
}

impl VsrTrainer {
    /// Stage 2 adds a critic seeded from `seed`.
    pub fn new(net: VsrNet, stage: u8, seed: u64) -> Result<Self> {
        let cfg = net.config().clone();
        let sched = *cfg.schedule(stage)?;
        let adam = AdamConfig {
            lr: sched.lr,
            ..AdamConfig::default()
        };
        let disc = if stage == 2 {
            Some(PatchDiscriminator::new(cfg.discriminator, seed)?)
        } else {
            None
        };
        Ok(Self {
            disc_opt: disc.as_ref().map(|_| Adam::new(adam)),
            disc,
            stage,
            step: 0,
            opt: Adam::new(adam),
            perceptual: Arc::new(RandomPyramid::new(cfg.perceptual_seed)),
            net,
        })
    }

    pub fn with_discriminator(mut self, disc: PatchDiscriminator<f32>) -> Result<Self> {
        if self.stage != 2 {
            return Err(Error::Config("stage-1 VSR training has no adversarial term".into()));
        }
        self.disc = Some(disc);
        Ok(self)
    }

    /// One update on a batch of samples that share one shape.
    pub fn train_step(&mut self, batch: &[VsrSample]) -> Result<VsrStepRecord> {
        let t0 = Instant::now();
        let cfg = self.net.config().clone();
        let first = batch.first().ok_or_else(|| Error::Empty("empty VSR batch".into()))?;
        let t_len = first.lr.len();
        if batch.iter().any(|s| s.lr.len() != t_len || s.hr.len() != t_len) {
            return Err(Error::Shape("VSR samples must share one length".into()));
        }
        let lr_clips: Vec<&Clip> = batch.iter().map(|s| &s.lr).collect();
        let hr_clips: Vec<&Clip> = batch.iter().map(|s| &s.hr).collect();
        let lr: Vec<Tensor<f32>> = (0..t_len).map(|t| stack_time(&lr_clips, t)).collect();
        let hr: Vec<Tensor<f32>> = (0..t_len).map(|t| stack_time(&hr_clips, t)).collect();

        let mut g = Graph::new();
        let sr = self.net.unroll_nodes(&mut g, &lr)?;
        let w = cfg.loss_weights;
        let inv_t = 1.0 / t_len as f64;
        let mut l1 = None;
        let mut per = None;
        let mut gan = None;
        let accumulate = |g: &mut Graph<f32>, acc: Option<_>, x| match acc {
            Some(a) => Some(g.add(a, x)),
            None => Some(x),
        };
        let hr_nodes: Vec<_> = hr.iter().map(|t| g.constant(t.clone())).collect();
        if self.stage == 2 {
            g.freeze_prefix(crate::gan::PREFIX);
        }
        for (&s, &y) in sr.iter().zip(&hr_nodes) {
            let d = g.l1_loss(s, y);
            l1 = accumulate(&mut g, l1, d);
            if self.stage == 2 {
                let p = perceptual_distance(&*self.perceptual, &mut g, s, y);
                per = accumulate(&mut g, per, p);
                if let Some(disc) = &self.disc {
                    let logits = disc.logits_node(&mut g, s);
                    let gl = generator_loss(&mut g, logits, cfg.gan_loss);
                    gan = accumulate(&mut g, gan, gl);
                }
            }
        }
        let l1 = g.scale(l1.expect("at least one frame"), inv_t);
        let mut total = g.scale(l1, w.l1);
        let per = per.map(|p| g.scale(p, inv_t));
        let gan = gan.map(|p| g.scale(p, inv_t));
        if let Some(p) = per {
            let p = g.scale(p, w.perceptual);
            total = g.add(total, p);
        }
        if let Some(a) = gan {
            let a = g.scale(a, w.gan);
            total = g.add(total, a);
        }
        let losses = VsrLosses {
            l1: g.scalar_value(l1),
            perceptual: per.map(|p| g.scalar_value(p)),
            gan: gan.map(|p| g.scalar_value(p)),
            total: g.scalar_value(total),
        };
        let finite = losses.total.is_finite() && losses.l1.is_finite();
        if !finite {
            return Err(Error::NonFinite {
                step: self.step as u64,
                detail: format!("{losses:?}"),
            });
        }
        let grads = g.backward(total);
        self.opt.step(&mut self.net.params, &g, &grads, |_| 1.0);

        let disc_losses = match (self.disc.as_mut(), self.disc_opt.as_mut()) {
            (Some(d), Some(o)) => {
                let real = Tensor::stack_batch(&hr);
                let fake = Tensor::stack_batch(&sr.iter().map(|&s| g.value(s).clone()).collect::<Vec<_>>());
                let l = discriminator_step(d, Some(o), &real, &fake, cfg.gan_loss)?;
                if !(l.discriminator.is_finite() && l.generator.is_finite()) {
                    return Err(Error::NonFinite {
                        step: self.step as u64,
                        detail: format!("critic losses {l:?}"),
                    });
                }
                Some(l)
            }
            _ => None,
        };
        self.step += 1;
        Ok(VsrStepRecord {
            stage: self.stage,
            step: self.step,
            losses,
            discriminator: disc_losses,
            lr: self.opt.cfg.lr,
            elapsed_ms: t0.elapsed().as_millis() as u64,
        })
    }

    /// Draws and degrades one batch. Every sample has its own stream derived
    /// from `master`, the step and its index, so workers can build samples
    /// in any order.
    pub fn make_batch(
        &self,
        hr_clips: &[Clip],
        deg: &DegradationConfig,
        deg_model: Option<&MsVqgan<f32>>,
        master: u64,
        workers: usize,
    ) -> Result<Vec<VsrSample>> {
        let cfg = self.net.config();
        let bs = cfg.schedule(self.stage)?.batch_size;
        let step = self.step;
        let make = |i: usize| -> Result<VsrSample> {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(master, &format!("vsr-sample/{step}/{i}")));
            let hr = sample_hr_window(hr_clips, cfg, &mut rng)?;
            let lr = degrade_clip(&hr, deg, deg_model, &mut rng)?;
            Ok(VsrSample { lr, hr })
        };
        let workers = workers.clamp(1, bs);
        if workers == 1 {
            return (0..bs).map(make).collect();
        }
        let mut slots: Vec<Option<Result<VsrSample>>> = (0..bs).map(|_| None).collect();
        std::thread::scope(|s| {
            for (w, chunk) in slots.chunks_mut(bs.div_ceil(workers)).enumerate() {
                let make = &make;
                let base = w * bs.div_ceil(workers);
                s.spawn(move || {
                    for (j, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(make(base + j));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every slot filled")).collect()
    }
}

/// Everything `train_vsr` needs besides the HR clips.
pub struct VsrTrainSetup<'a> {
    pub stage: u8,
    pub cfg: &'a VsrConfig,
    pub degradation: &'a DegradationConfig,
    /// Stage-2 degradation model; required in stage 2.
    pub degradation_model: Option<&'a MsVqgan<f32>>,
    /// Stage-1 network to fine-tune; required in stage 2.
    pub init: Option<&'a VsrNet>,
    pub seed: u64,
    pub workers: usize,
}

pub fn train_vsr(hr_clips: &[Clip], setup: &VsrTrainSetup<'_>, obs: &mut dyn VsrObserver) -> Result<VsrTrainer> {
    let stage = setup.stage;
    setup.cfg.schedule(stage)?;
    if hr_clips.is_empty() {
        return Err(Error::Empty("no HR training clips".into()));
    }
    let deg = stage_degradation(stage, setup.degradation);
    deg.validate()?;
    let model = if deg.vqd.enable {
        let m = setup
            .degradation_model
            .ok_or_else(|| Error::Config("VSR stage 2 needs a stage-2 degradation model".into()))?;
        if m.stage() != Stage::Stage2 {
            return Err(Error::Stage {
                expected: 2,
                found: m.stage().number(),
            });
        }
        Some(m)
    } else {
        None
    };
    let net = match (stage, setup.init) {
        (2, None) => return Err(Error::Config("VSR stage 2 needs a stage-1 VSR network".into())),
        (_, Some(n)) => {
            if n.config() != setup.cfg {
                let diffs = crate::checkpoint::json_diff(&serde_json::to_value(n.config())?, &serde_json::to_value(setup.cfg)?);
                return Err(Error::ConfigDiff(diffs));
            }
            n.clone()
        }
        (_, None) => VsrNet::new(setup.cfg.clone(), crate::seed::derive(setup.seed, "vsr-init"))?,
    };
    let mut t = VsrTrainer::new(net, stage, crate::seed::derive(setup.seed, "vsr-critic"))?;
    let steps = setup.cfg.schedule(stage)?.steps;
    let master = crate::seed::derive(setup.seed, &format!("vsr-data/{stage}"));
    for _ in 0..steps {
        let batch = t.make_batch(hr_clips, &deg, model, master, setup.workers)?;
        let rec = match t.train_step(&batch) {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                obs.on_failure(&t, &e.to_string())?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let every = obs.snapshot_every();
        if every > 0 && t.step % every == 0 {
            obs.on_snapshot(&t)?;
        }
        if obs.on_step(&rec)? == Control::Stop {
            break;
        }
    }
    Ok(t)
}
