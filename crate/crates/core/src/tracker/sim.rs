use serde::{Deserialize, Serialize};

use super::{Prediction, Tracker, VideoSpec};
use crate::bank::MemoryBank;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Distractor similarity at or above which the tracker hallucinates a mask.
    pub hallucination_threshold: f64,
    /// Object similarity below which a visible object is reported missing.
    pub similarity_floor: f64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            hallucination_threshold: 0.5,
            similarity_floor: 0.05,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let h = self.hallucination_threshold;
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::OutOfRange {
                what: "hallucination_threshold",
                value: h.to_string(),
                valid: "(0, 1)".into(),
            });
        }
        if !(self.similarity_floor >= 0.0) {
            return Err(Error::OutOfRange {
                what: "similarity_floor",
                value: self.similarity_floor.to_string(),
                valid: ">= 0".into(),
            });
        }
        Ok(())
    }
}

fn max_similarity(target: f64, bank: &MemoryBank, video: &VideoSpec) -> Result<f64> {
    bank.slots().iter().try_fold(0.0_f64, |best, entry| {
        let frame = video.frames.get(entry.feature_id).ok_or_else(|| {
            Error::invariant(format!(
                "memory feature {} does not index a frame of {} (length {})",
                entry.feature_id, video.video_id, video.length
            ))
        })?;
        Ok(best.max((target - frame.appearance).cos().max(0.0)))
    })
}

/// Synthetic per-frame quality for frame `t` given the current bank.
///
/// Visible frames score the best cosine similarity to a stored memory,
/// scaled by `1 - difficulty`. Invisible frames score 1 when the tracker
/// correctly predicts no object and 0 when a stored memory matches the
/// distractor closely enough to hallucinate a mask.
pub fn simulate(
    t: usize,
    bank: &MemoryBank,
    video: &VideoSpec,
    params: &SimParams,
) -> Result<Prediction> {
    let frame = video.frames.get(t).ok_or_else(|| Error::OutOfRange {
        what: "frame",
        value: t.to_string(),
        valid: format!("0..{}", video.length),
    })?;
    if frame.visible {
        let sim = max_similarity(frame.appearance, bank, video)?;
        Ok(Prediction {
            q: (sim * (1.0 - frame.difficulty)).clamp(0.0, 1.0),
            predicted_empty: sim < params.similarity_floor,
            gt_empty: false,
        })
    } else {
        let lure = match frame.distractor_appearance {
            Some(angle) => max_similarity(angle, bank, video)?,
            None => {
                // still reject dangling memories
                max_similarity(0.0, bank, video)?;
                0.0
            }
        };
        let predicted_empty = lure < params.hallucination_threshold;
        Ok(Prediction {
            q: if predicted_empty { 1.0 } else { 0.0 },
            predicted_empty,
            gt_empty: true,
        })
    }
}

/// The cosine-appearance tracker over one [`VideoSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticTracker {
    video: VideoSpec,
    params: SimParams,
}

impl SyntheticTracker {
    pub fn new(video: VideoSpec, params: SimParams) -> Result<Self> {
        video.validate()?;
        params.validate()?;
        Ok(Self { video, params })
    }

    pub fn video(&self) -> &VideoSpec {
        &self.video
    }
}

impl Tracker for SyntheticTracker {
    fn video_id(&self) -> &str {
        &self.video.video_id
    }

    fn video_length(&self) -> usize {
        self.video.length
    }

    fn predict(&mut self, t: usize, bank: &MemoryBank) -> Result<Prediction> {
        simulate(t, bank, &self.video, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::tracker::FrameSpec;

    fn frame(appearance: f64, visible: bool, distractor: Option<f64>) -> FrameSpec {
        FrameSpec {
            appearance,
            visible,
            difficulty: 0.0,
            distractor_appearance: distractor,
        }
    }

    fn video(frames: Vec<FrameSpec>) -> VideoSpec {
        VideoSpec::new("unit", frames).unwrap()
    }

    #[test]
    fn identical_appearance_scores_one() {
        let v = video(vec![frame(1.0, true, None), frame(1.0, true, None)]);
        let bank = MemoryBank::from_frames(3, &[0]).unwrap();
        let p = simulate(1, &bank, &v, &SimParams::default()).unwrap();
        assert_eq!(p.q, 1.0);
        assert!(!p.predicted_empty);
    }

    #[test]
    fn orthogonal_appearance_scores_zero() {
        let v = video(vec![
            frame(0.5, true, None),
            frame(0.5 + FRAC_PI_2, true, None),
        ]);
        let bank = MemoryBank::from_frames(3, &[0]).unwrap();
        let p = simulate(1, &bank, &v, &SimParams::default()).unwrap();
        assert!(p.q.abs() < 1e-15, "q = {}", p.q);
        assert!(p.predicted_empty);
    }

    #[test]
    fn distractor_matching_memory_hallucinates() {
        let theta_d = 2.0;
        let v = video(vec![
            frame(0.0, true, None),
            frame(theta_d, true, None),
            frame(theta_d, false, Some(theta_d)),
        ]);
        let bank = MemoryBank::from_frames(3, &[0, 1]).unwrap();
        let p = simulate(2, &bank, &v, &SimParams::default()).unwrap();
        assert_eq!(p.q, 0.0);
        assert!(!p.predicted_empty);
        assert!(p.gt_empty);

        let bank = MemoryBank::from_frames(3, &[0]).unwrap();
        let p = simulate(2, &bank, &v, &SimParams::default()).unwrap();
        assert_eq!(p.q, 1.0);
        assert!(p.predicted_empty && p.gt_empty);
    }

    #[test]
    fn invisible_without_distractor_is_empty_empty() {
        let v = video(vec![frame(0.0, true, None), frame(0.0, false, None)]);
        let bank = MemoryBank::from_frames(2, &[0]).unwrap();
        let p = simulate(1, &bank, &v, &SimParams::default()).unwrap();
        assert_eq!(p.q, 1.0);
        assert!(p.predicted_empty);
    }

    #[test]
    fn difficulty_scales_quality() {
        let mut f = frame(1.0, true, None);
        f.difficulty = 0.25;
        let v = video(vec![frame(1.0, true, None), f]);
        let bank = MemoryBank::from_frames(2, &[0]).unwrap();
        assert_eq!(
            simulate(1, &bank, &v, &SimParams::default()).unwrap().q,
            0.75
        );
    }

    #[test]
    fn dangling_feature_rejected() {
        let v = video(vec![frame(0.0, true, None), frame(0.0, true, None)]);
        let bank = MemoryBank::from_frames(3, &[0, 5]).unwrap();
        assert!(matches!(
            simulate(1, &bank, &v, &SimParams::default()),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn params_validation() {
        let mut p = SimParams::default();
        assert!(p.validate().is_ok());
        p.hallucination_threshold = 1.0;
        assert!(p.validate().is_err());
        p.hallucination_threshold = 0.5;
        p.similarity_floor = -0.1;
        assert!(p.validate().is_err());
    }
}
