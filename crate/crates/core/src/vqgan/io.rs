use super::config::{MsVqganConfig, Stage};
use super::model::MsVqgan;
use super::train::VqganTrainer;
use crate::checkpoint::{json_diff, Checkpoint, CheckpointKind};
use crate::error::{Error, Result};
use crate::gan::{PatchDiscriminator, PREFIX};

/// Generator and critic weights plus the producing config.
pub fn to_checkpoint(model: &MsVqgan<f32>, disc: Option<&PatchDiscriminator<f32>>, step: u64) -> Result<Checkpoint> {
    let cfg = model.config();
    let mut c = Checkpoint::new(CheckpointKind::DegradationModel, cfg.stage.number(), step, cfg)?;
    c.add_params(&model.params)?;
    if let Some(d) = disc {
        c.add_params(&d.params)?;
    }
    Ok(c)
}

/// Rebuilds the model (and the critic, when one was stored). Every
/// architecture parameter must be present exactly once.
pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(MsVqgan<f32>, Option<PatchDiscriminator<f32>>)> {
    ckpt.expect_kind(CheckpointKind::DegradationModel)?;
    let cfg: MsVqganConfig = ckpt.config_as()?;
    if cfg.stage.number() != ckpt.stage {
        return Err(Error::Integrity {
            member: "header".into(),
            reason: format!("stage tag {} disagrees with the stored config ({})", ckpt.stage, cfg.stage),
        });
    }
    let disc_prefix = format!("{PREFIX}.");
    let model = MsVqgan::from_params(cfg.clone(), ckpt.params_without(&[&disc_prefix]))?;
    let dp = ckpt.params_with_prefix(&disc_prefix);
    let disc = if dp.is_empty() {
        None
    } else {
        Some(PatchDiscriminator::from_params(cfg.discriminator, dp)?)
    };
    Ok((model, disc))
}

/// A stage-1 model, refusing any other stage.
pub fn load_stage1_model(ckpt: &Checkpoint) -> Result<MsVqgan<f32>> {
    ckpt.expect_kind(CheckpointKind::DegradationModel)?;
    ckpt.expect_stage(1)?;
    Ok(from_checkpoint(ckpt)?.0)
}

/// A stage-2 model, refusing any other stage.
pub fn load_stage2_model(ckpt: &Checkpoint) -> Result<MsVqgan<f32>> {
    ckpt.expect_kind(CheckpointKind::DegradationModel)?;
    ckpt.expect_stage(2)?;
    Ok(from_checkpoint(ckpt)?.0)
}

impl VqganTrainer {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        to_checkpoint(&self.model, self.disc.as_ref(), self.step as u64)
    }

    /// Continues training from `ckpt`, which must have been produced by
    /// exactly `cfg`. Optimizer moments restart from zero.
    pub fn resume(ckpt: &Checkpoint, cfg: &MsVqganConfig, seed: u64) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::DegradationModel)?;
        ckpt.expect_stage(cfg.stage.number())?;
        let diffs = json_diff(&ckpt.config, &serde_json::to_value(cfg)?);
        if !diffs.is_empty() {
            return Err(Error::ConfigDiff(diffs));
        }
        let (model, disc) = from_checkpoint(ckpt)?;
        let mut t = match (cfg.stage, disc) {
            (Stage::Stage2, None) => VqganTrainer::new(model, seed)?,
            (_, disc) => VqganTrainer::with_discriminator(model, disc)?,
        };
        t.step = ckpt.step as usize;
        Ok(t)
    }
}
