//! Dataset preparation: manifests, scene filtering, HR-SR enhancement and
//! synthetic test clips.

mod enhance;
mod filter;
mod manifest;
mod synth;

pub use enhance::{hr_sr_enhance, BicubicEnhancer, Enhancer, UnsharpEnhancer};
pub use filter::{scene_filter, scene_filter_indices};
pub use manifest::{write_clip, write_manifest, ClipEntry, ClipManifest, Role};
pub use synth::{synth_clips, SynthConfig, OUTLINE_RGB};
