use crate::error::{Error, Result};
use crate::frame::Clip;

/// Indices kept by [`scene_filter`].
pub fn scene_filter_indices(clip: &Clip, threshold: f64) -> Result<Vec<usize>> {
    let first = clip
        .frames
        .first()
        .ok_or_else(|| Error::Empty("scene filter needs at least one frame".into()))?;
    if !(threshold >= 0.0) {
        return Err(Error::Parameter(format!("threshold {threshold} must be non-negative")));
    }
    let mut kept = vec![0];
    let mut last = first;
    for (t, f) in clip.frames.iter().enumerate().skip(1) {
        if f.mean_abs_diff(last)? >= threshold {
            kept.push(t);
            last = f;
        }
    }
    Ok(kept)
}

/// Drops near-duplicate frames: frame 0 is kept, and each later frame is
/// kept when its mean absolute difference to the last kept frame reaches
/// `threshold`.
pub fn scene_filter(clip: &Clip, threshold: f64) -> Result<Clip> {
    let kept = scene_filter_indices(clip, threshold)?;
    Clip::new(kept.into_iter().map(|i| clip.frames[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Frame;

    #[test]
    fn identical_frames_collapse_to_first() {
        let c = Clip::new(vec![Frame::filled(4, 4, [0.5; 3]); 5]).unwrap();
        assert_eq!(scene_filter_indices(&c, 0.01).unwrap(), vec![0]);
        assert_eq!(scene_filter(&c, 0.0).unwrap().len(), 5);
        assert!(scene_filter(&Clip::default(), 0.01).is_err());
    }
}
