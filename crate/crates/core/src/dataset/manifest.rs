//! Clip manifests: JSON lists of clips, each an ordered list of PNG frames.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Clip, Frame};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "lq-train")]
    LqTrain,
    #[serde(rename = "hr-train")]
    HrTrain,
    #[serde(rename = "test")]
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub id: String,
    pub role: Role,
    /// Frame files in temporal order; relative paths resolve against the
    /// manifest's directory.
    pub frames: Vec<PathBuf>,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub clips: Vec<ClipEntry>,
    #[serde(skip)]
    base: PathBuf,
}

impl ClipManifest {
    pub fn new(clips: Vec<ClipEntry>, base: impl Into<PathBuf>) -> Self {
        Self {
            clips,
            base: base.into(),
        }
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: ClipManifest = serde_json::from_str(&text)?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    /// Writes the manifest; frame paths are stored as given.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ClipEntry> {
        self.clips.iter().filter(move |c| c.role == role)
    }

    /// Every frame exists and has the clip's declared resolution; clip ids
    /// are unique.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for c in &self.clips {
            if !ids.insert(&c.id) {
                return Err(Error::Parameter(format!("duplicate clip id {}", c.id)));
            }
            if c.frames.is_empty() {
                return Err(Error::Empty(format!("clip {} has no frames", c.id)));
            }
            for f in &c.frames {
                let p = self.resolve(f);
                if !p.is_file() {
                    return Err(Error::io(
                        &p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "frame file missing"),
                    ));
                }
                let (w, h) = image::image_dimensions(&p).map_err(|source| Error::Image {
                    path: p.clone(),
                    source,
                })?;
                if (w as usize, h as usize) != (c.width, c.height) {
                    return Err(Error::Shape(format!(
                        "clip {}: frame {} is {w}x{h}, manifest says {}x{}",
                        c.id,
                        p.display(),
                        c.width,
                        c.height
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_clip(&self, entry: &ClipEntry) -> Result<Clip> {
        let frames = entry
            .frames
            .iter()
            .map(|f| Frame::load_png(self.resolve(f)))
            .collect::<Result<Vec<_>>>()?;
        let clip = Clip::new(frames)?;
        if let Some((h, w)) = clip.dims() {
            if (w, h) != (entry.width, entry.height) {
                return Err(Error::Shape(format!(
                    "clip {} frames are {w}x{h}, manifest says {}x{}",
                    entry.id, entry.width, entry.height
                )));
            }
        }
        Ok(clip)
    }
}

/// Writes `clip` as `dir/<id>/NNNNN.png` and returns its entry with paths
/// relative to `dir`.
pub fn write_clip(dir: &Path, id: &str, role: Role, clip: &Clip) -> Result<ClipEntry> {
    let (height, width) = clip.dims().ok_or_else(|| Error::Empty(format!("clip {id} has no frames")))?;
    let mut frames = Vec::with_capacity(clip.len());
    for (t, f) in clip.frames.iter().enumerate() {
        let rel = PathBuf::from(id).join(format!("{t:05}.png"));
        f.save_png(dir.join(&rel))?;
        frames.push(rel);
    }
    Ok(ClipEntry {
        id: id.to_string(),
        role,
        frames,
        width,
        height,
    })
}

/// Writes clips under `dir` plus `dir/manifest.json`.
pub fn write_manifest(dir: &Path, clips: &[(String, Role, Clip)]) -> Result<ClipManifest> {
    let entries = clips
        .iter()
        .map(|(id, role, clip)| write_clip(dir, id, *role, clip))
        .collect::<Result<Vec<_>>>()?;
    let m = ClipManifest::new(entries, dir);
    m.save(dir.join("manifest.json"))?;
    Ok(m)
}
