//! Scorer selection for the no-reference protocol.

use std::path::PathBuf;
use std::process::Command;

use vqd_core::eval::{ConstantScorer, GradientEnergyScorer, Scorer};
use vqd_core::{Error, Frame, Result};

/// Runs an external program once per crop: the crop is written to a
/// temporary PNG whose path is the only argument, and the first token of
/// stdout is parsed as the score.
pub struct ExternalScorer {
    pub program: PathBuf,
}

impl Scorer for ExternalScorer {
    fn score(&self, crop: &Frame) -> Result<f64> {
        let file = tempfile::Builder::new()
            .suffix(".png")
            .tempfile()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        crop.save_png(file.path())?;
        let out = Command::new(&self.program)
            .arg(file.path())
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !out.status.success() {
            return Err(Error::Environment(format!(
                "scorer {} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        text.split_whitespace()
            .next()
            .and_then(|t| t.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Error::Environment(format!("scorer {} printed no number: {:?}", self.program.display(), text.trim()))
            })
    }
}

/// `gradient-energy`, `constant:<value>`, or a path to an executable.
pub fn parse(spec: &str) -> Result<Box<dyn Scorer>> {
    if spec == "gradient-energy" {
        return Ok(Box::new(GradientEnergyScorer));
    }
    if let Some(v) = spec.strip_prefix("constant:") {
        let v: f64 = v
            .parse()
            .map_err(|_| Error::Config(format!("constant scorer needs a number, got {v:?}")))?;
        return Ok(Box::new(ConstantScorer(v)));
    }
    let program = PathBuf::from(spec);
    if !program.is_file() {
        return Err(Error::Config(format!(
            "scorer {spec:?} is neither a builtin (gradient-energy, constant:<v>) nor an existing file"
        )));
    }
    Ok(Box::new(ExternalScorer { program }))
}
