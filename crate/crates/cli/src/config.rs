//! Run configuration: a JSON file naming a preset, with any subset of the
//! preset's fields overridden. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vqd_core::dataset::{BicubicEnhancer, Enhancer, SynthConfig, UnsharpEnhancer};
use vqd_core::degrade::DegradationConfig;
use vqd_core::eval::EvalProtocolConfig;
use vqd_core::vqgan::MsVqganConfig;
use vqd_core::vsr::VsrConfig;
use vqd_core::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Tiny,
    PaperScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnhancerConfig {
    Bicubic { scale: usize },
    Unsharp { scale: usize, sigma: f64, amount: f32 },
}

impl EnhancerConfig {
    pub fn build(&self) -> Box<dyn Enhancer> {
        match *self {
            EnhancerConfig::Bicubic { scale } => Box::new(BicubicEnhancer { scale }),
            EnhancerConfig::Unsharp { scale, sigma, amount } => Box::new(UnsharpEnhancer { scale, sigma, amount }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub scene_threshold: f64,
    /// LQ training clips written by `synth-data`; `synth.clips` sets their count.
    pub synth: SynthConfig,
    pub synth_hr_clips: usize,
    pub synth_test_clips: usize,
    /// Side of the HR and test frames; LQ frames use `synth.size`.
    pub synth_hr_size: usize,
    /// JPEG-style quality used to make the synthetic LQ clips.
    pub synth_lq_quality: u8,
    pub enhancer: EnhancerConfig,
    /// Replace HR targets by their enhanced version in VSR stage 2.
    pub enhance_gt: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory for run logs of commands that are not given `--log`.
    #[serde(default)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub preset: Preset,
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    pub degradation_model: MsVqganConfig,
    pub degradation: DegradationConfig,
    pub vsr: VsrConfig,
    pub eval: EvalProtocolConfig,
    pub dataset: DatasetConfig,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Tiny => Self {
                version: SCHEMA_VERSION,
                preset: p,
                seed: 0,
                paths: Paths::default(),
                degradation_model: MsVqganConfig::tiny(),
                degradation: DegradationConfig::default(),
                vsr: VsrConfig::tiny(),
                eval: EvalProtocolConfig {
                    crop_size: 64,
                    ..EvalProtocolConfig::default()
                },
                dataset: DatasetConfig {
                    scene_threshold: 0.01,
                    synth: SynthConfig::default(),
                    synth_hr_clips: 8,
                    synth_test_clips: 2,
                    synth_hr_size: 128,
                    synth_lq_quality: 40,
                    enhancer: EnhancerConfig::Bicubic { scale: 4 },
                    enhance_gt: true,
                },
            },
            Preset::PaperScale => Self {
                preset: p,
                degradation_model: MsVqganConfig::paper(),
                vsr: VsrConfig::paper(),
                eval: EvalProtocolConfig::default(),
                dataset: DatasetConfig {
                    synth: SynthConfig {
                        size: 256,
                        ..SynthConfig::default()
                    },
                    synth_hr_size: 1024,
                    ..Self::preset(Preset::Tiny).dataset
                },
                ..Self::preset(Preset::Tiny)
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let user: serde_json::Value = serde_json::from_str(text)?;
        let obj = user
            .as_object()
            .ok_or_else(|| Error::Config("run config must be a JSON object".into()))?;
        match obj.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Config(format!(
                    "run config schema version {v} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Config("run config needs an integer \"version\"".into())),
        }
        let preset: Preset = match obj.get("preset") {
            Some(p) => serde_json::from_value(p.clone())
                .map_err(|e| Error::Config(format!("preset: {e}")))?,
            None => return Err(Error::Config("run config needs a \"preset\" (tiny or paper-scale)".into())),
        };
        let mut merged = serde_json::to_value(Self::preset(preset))?;
        merge(&mut merged, &user);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The config at `path`, or the tiny preset when none is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::preset(Preset::Tiny)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.degradation_model.validate()?;
        self.degradation.validate()?;
        self.vsr.validate()?;
        self.eval.validate()?;
        let d = &self.dataset;
        if !(d.scene_threshold >= 0.0) {
            return Err(Error::Config("dataset.scene_threshold must be non-negative".into()));
        }
        if d.synth_hr_size % 32 != 0 || d.synth_hr_size == 0 {
            return Err(Error::Config("dataset.synth_hr_size must be a positive multiple of 32".into()));
        }
        if !(1..=100).contains(&d.synth_lq_quality) {
            return Err(Error::Config("dataset.synth_lq_quality must be in 1..=100".into()));
        }
        if self.degradation.down.scale != self.vsr.scale {
            return Err(Error::Config(format!(
                "degradation.down.scale {} must equal vsr.scale {}",
                self.degradation.down.scale, self.vsr.scale
            )));
        }
        Ok(())
    }
}

/// Overlays `patch` on `base`; objects merge key by key, anything else is
/// replaced.
fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_override_and_unknown_keys() {
        let c = RunConfig::from_json(r#"{"version":1,"preset":"tiny","seed":9,"vsr":{"res_blocks":3}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.vsr.res_blocks, 3);
        assert_eq!(c.vsr.channels, 16);
        assert!(RunConfig::from_json(r#"{"version":1,"preset":"tiny","vsr":{"blocks":3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"version":1,"preset":"tiny","extra":1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"version":2,"preset":"tiny"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"preset":"tiny"}"#).is_err());
    }

    #[test]
    fn presets_validate() {
        RunConfig::preset(Preset::Tiny).validate().unwrap();
        RunConfig::preset(Preset::PaperScale).validate().unwrap();
        let t = RunConfig::preset(Preset::Tiny).degradation_model;
        assert_eq!((t.base_channels, t.embed_dim, t.codebook_size, t.crop_size), (16, 32, 64, 64));
        let p = RunConfig::preset(Preset::PaperScale).degradation_model;
        assert_eq!((p.base_channels, p.embed_dim, p.codebook_size, p.crop_size), (128, 256, 1024, 256));
    }
}
