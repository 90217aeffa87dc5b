use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{MsVqganConfig, QuantizerMode, Stage};
use super::model::{LossReport, MsVqgan};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::gan::{discriminator_step, AdversarialLosses, GanLoss, PatchDiscriminator};
use crate::nn::{Adam, AdamConfig};
use crate::tensor::Tensor;

/// One logged optimizer step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: u8,
    pub step: usize,
    pub losses: LossReport,
    pub discriminator: Option<AdversarialLosses>,
    pub lr: f64,
    pub elapsed_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Hooks called by the training loop. Every method has a no-op default.
pub trait TrainObserver {
    fn on_step(&mut self, _rec: &StepRecord) -> Result<Control> {
        Ok(Control::Continue)
    }

    /// Steps between snapshots; 0 disables them.
    fn snapshot_every(&self) -> usize {
        0
    }

    fn on_snapshot(&mut self, _trainer: &VqganTrainer) -> Result<()> {
        Ok(())
    }

    /// Called with the state that produced a non-finite loss, before the
    /// loop aborts.
    fn on_failure(&mut self, _trainer: &VqganTrainer, _detail: &str) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Draws `batch` random `crop x crop` patches from `data`.
pub fn sample_crops(data: &[Frame], crop: usize, batch: usize, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    if data.is_empty() {
        return Err(Error::Empty("training set has no images".into()));
    }
    let mut items = Vec::with_capacity(batch);
    for _ in 0..batch {
        let f = &data[rng.gen_range(0..data.len())];
        let (h, w) = f.dims();
        if h < crop || w < crop {
            return Err(Error::Shape(format!("training image {w}x{h} is smaller than crop {crop}")));
        }
        let top = rng.gen_range(0..=h - crop);
        let left = rng.gen_range(0..=w - crop);
        items.push(f.crop(top, left, crop, crop)?.to_tensor::<f32>());
    }
    Ok(Tensor::stack_batch(&items))
}

/// Generator (and, in stage 2, critic) with optimizer state.
#[derive(Clone, Debug)]
pub struct VqganTrainer {
    pub model: MsVqgan<f32>,
    pub disc: Option<PatchDiscriminator<f32>>,
    opt: Adam<f32>,
    disc_opt: Option<Adam<f32>>,
    pub step: usize,
    pub gan_loss: GanLoss,
}

impl VqganTrainer {
    /// Stage-2 models get a fresh critic seeded from `seed`.
    pub fn new(model: MsVqgan<f32>, seed: u64) -> Result<Self> {
        let disc = match model.stage() {
            Stage::Stage1 => None,
            Stage::Stage2 => Some(PatchDiscriminator::new(model.config().discriminator, seed)?),
        };
        Self::with_discriminator(model, disc)
    }

    pub fn with_discriminator(model: MsVqgan<f32>, disc: Option<PatchDiscriminator<f32>>) -> Result<Self> {
        let cfg = model.config();
        let sched = cfg.schedule();
        let adam = AdamConfig {
            lr: sched.lr(),
            beta1: cfg.optimizer.beta1,
            beta2: cfg.optimizer.beta2,
            eps: cfg.optimizer.eps,
        };
        if model.stage() == Stage::Stage1 && disc.is_some() {
            return Err(Error::Config("stage-1 training has no adversarial term".into()));
        }
        Ok(Self {
            disc_opt: disc.as_ref().map(|_| Adam::new(adam)),
            opt: Adam::new(adam),
            disc,
            model,
            step: 0,
            gan_loss: GanLoss::Hinge,
        })
    }

    /// One generator update followed, when adversarial training is active,
    /// by one critic update on the detached reconstruction.
    pub fn train_step(&mut self, batch: &Tensor<f32>) -> Result<StepRecord> {
        let t0 = Instant::now();
        let cfg = self.model.config().clone();
        let adversarial = self.disc.is_some() && self.step >= cfg.discriminator_start;
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let f = self.model.forward_nodes(&mut g, x, QuantizerMode::Nearest)?;
        let critic = if adversarial {
            self.disc.as_ref().map(|d| (d, self.gan_loss))
        } else {
            None
        };
        let obj = self.model.objective_nodes(&mut g, &f, critic);
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
        if !losses.all_finite() {
            return Err(Error::NonFinite {
                step: self.step as u64,
                detail: format!("{losses:?}"),
            });
        }
        let grads = g.backward(obj.total);
        let model = &self.model;
        let mults: std::collections::HashMap<String, f64> = g
            .param_names()
            .iter()
            .map(|n| (n.clone(), model.lr_multiplier(n)))
            .collect();
        self.opt
            .step(&mut self.model.params, &g, &grads, |n| mults.get(n).copied().unwrap_or(1.0));
        let fake = g.value(f.decoded.output).clone();
        drop(g);
        let disc_losses = match (adversarial, self.disc.as_mut(), self.disc_opt.as_mut()) {
            (true, Some(d), Some(o)) => {
                let l = discriminator_step(d, Some(o), batch, &fake, self.gan_loss)?;
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
        Ok(StepRecord {
            stage: cfg.stage.number(),
            step: self.step,
            losses,
            discriminator: disc_losses,
            lr: self.opt.cfg.lr,
            elapsed_ms: t0.elapsed().as_millis() as u64,
        })
    }

    /// Runs `steps` updates on random crops of `data`.
    pub fn run(
        &mut self,
        data: &[Frame],
        steps: usize,
        rng: &mut ChaCha8Rng,
        obs: &mut dyn TrainObserver,
    ) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Empty("training set has no images".into()));
        }
        let sched = *self.model.config().schedule();
        let crop = self.model.config().crop_size;
        for _ in 0..steps {
            let batch = sample_crops(data, crop, sched.batch_size, rng)?;
            let rec = match self.train_step(&batch) {
                Ok(r) => r,
                Err(e @ Error::NonFinite { .. }) => {
                    obs.on_failure(self, &e.to_string())?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let every = obs.snapshot_every();
            if every > 0 && self.step % every == 0 {
                obs.on_snapshot(self)?;
            }
            if obs.on_step(&rec)? == Control::Stop {
                break;
            }
        }
        Ok(())
    }
}

/// Trains the stem, top branch and codebook with `L_vq + L_per`.
pub fn train_stage1(
    dataset: &[Frame],
    cfg: &MsVqganConfig,
    rng: &mut ChaCha8Rng,
    obs: &mut dyn TrainObserver,
) -> Result<VqganTrainer> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set has no images".into()));
    }
    let cfg = cfg.clone().with_stage(Stage::Stage1);
    let model = MsVqgan::new(cfg.clone(), rng.gen())?;
    let mut t = VqganTrainer::new(model, rng.gen())?;
    t.run(dataset, cfg.stage1.steps, rng, obs)?;
    Ok(t)
}

/// Adds the middle and bottom branches to a stage-1 model and trains all of
/// them with `L_vq + L_per + L_adv`, the top branch at a reduced rate.
pub fn train_stage2(
    stage1: &MsVqgan<f32>,
    dataset: &[Frame],
    cfg: &MsVqganConfig,
    rng: &mut ChaCha8Rng,
    obs: &mut dyn TrainObserver,
) -> Result<VqganTrainer> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set has no images".into()));
    }
    let model = MsVqgan::load_stage1(stage1, cfg.clone(), rng.gen())?;
    let steps = model.config().stage2.steps;
    let mut t = VqganTrainer::new(model, rng.gen())?;
    t.run(dataset, steps, rng, obs)?;
    Ok(t)
}

/// Seeded stream for a named component derived from a master seed.
pub fn component_rng(master: u64, component: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::seed::derive(master, component))
}
