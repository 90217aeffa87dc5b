use super::config::VsrConfig;
use super::net::{VsrNet, PREFIX};
use super::train::VsrTrainer;
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::error::Result;
use crate::gan::PatchDiscriminator;

pub fn to_checkpoint(net: &VsrNet, disc: Option<&PatchDiscriminator<f32>>, stage: u8, step: u64) -> Result<Checkpoint> {
    let mut c = Checkpoint::new(CheckpointKind::Vsr, stage, step, net.config())?;
    c.add_params(&net.params)?;
    if let Some(d) = disc {
        c.add_params(&d.params)?;
    }
    Ok(c)
}

pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(VsrNet, Option<PatchDiscriminator<f32>>)> {
    ckpt.expect_kind(CheckpointKind::Vsr)?;
    let cfg: VsrConfig = ckpt.config_as()?;
    let net = VsrNet::from_params(cfg.clone(), ckpt.params_with_prefix(&format!("{PREFIX}.")))?;
    let dp = ckpt.params_with_prefix(&format!("{}.", crate::gan::PREFIX));
    let disc = if dp.is_empty() {
        None
    } else {
        Some(PatchDiscriminator::from_params(cfg.discriminator, dp)?)
    };
    let known = net.params.len() + disc.as_ref().map_or(0, |d| d.params.len());
    if known != ckpt.arrays.len() {
        let stray = ckpt
            .arrays
            .keys()
            .find(|n| !net.params.contains(n) && !disc.as_ref().is_some_and(|d| d.params.contains(n)))
            .cloned()
            .unwrap_or_default();
        return Err(crate::Error::Integrity {
            member: stray,
            reason: "array is not part of the VSR network".into(),
        });
    }
    Ok((net, disc))
}

impl VsrTrainer {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        to_checkpoint(&self.net, self.disc.as_ref(), self.stage, self.step as u64)
    }
}
