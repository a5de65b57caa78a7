use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground truth for one frame of a synthetic video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    /// Appearance angle in `[0, 2π)`. For invisible frames this is what a
    /// memory of that frame encodes.
    pub appearance: f64,
    pub visible: bool,
    /// Per-frame difficulty in `[0, 1)`.
    pub difficulty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor_appearance: Option<f64>,
}

impl FrameSpec {
    fn visible(appearance: f64, difficulty: f64) -> Self {
        Self {
            appearance: wrap(appearance),
            visible: true,
            difficulty,
            distractor_appearance: None,
        }
    }

    fn validate(&self, t: usize) -> Result<()> {
        let angle_ok = |a: f64| (0.0..TAU).contains(&a);
        if !angle_ok(self.appearance) {
            return Err(Error::OutOfRange {
                what: "appearance",
                value: format!("{} at frame {t}", self.appearance),
                valid: "[0, 2pi)".into(),
            });
        }
        if !(0.0..1.0).contains(&self.difficulty) {
            return Err(Error::OutOfRange {
                what: "difficulty",
                value: format!("{} at frame {t}", self.difficulty),
                valid: "[0, 1)".into(),
            });
        }
        if let Some(d) = self.distractor_appearance {
            if !angle_ok(d) {
                return Err(Error::OutOfRange {
                    what: "distractor appearance",
                    value: format!("{d} at frame {t}"),
                    valid: "[0, 2pi)".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSpec {
    pub video_id: String,
    pub length: usize,
    pub frames: Vec<FrameSpec>,
}

impl VideoSpec {
    pub fn new(video_id: impl Into<String>, frames: Vec<FrameSpec>) -> Result<Self> {
        let video = Self {
            video_id: video_id.into(),
            length: frames.len(),
            frames,
        };
        video.validate()?;
        Ok(video)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length != self.frames.len() {
            return Err(Error::invariant(format!(
                "video {} declares length {} but has {} frames",
                self.video_id,
                self.length,
                self.frames.len()
            )));
        }
        match self.frames.first() {
            Some(f) if f.visible => {}
            Some(_) => return Err(Error::invariant("frame 0 must be visible")),
            None => return Err(Error::invariant("video has no frames")),
        }
        self.frames
            .iter()
            .enumerate()
            .try_for_each(|(t, f)| f.validate(t))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let video: VideoSpec = serde_json::from_str(text)?;
        video.validate()?;
        Ok(video)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("video serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VideoFamily {
    /// Appearance follows a random walk; always visible.
    Drift,
    /// One contiguous invisible window, no distractor; appearance jumps across it.
    Occlusion,
    /// Invisible windows showing a distractor that resembles the object as it
    /// looked a few frames earlier.
    Distractor,
}

impl VideoFamily {
    pub const ALL: [VideoFamily; 3] = [
        VideoFamily::Drift,
        VideoFamily::Occlusion,
        VideoFamily::Distractor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VideoFamily::Drift => "drift",
            VideoFamily::Occlusion => "occlusion",
            VideoFamily::Distractor => "distractor",
        }
    }
}

impl fmt::Display for VideoFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VideoFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VideoFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown video family {s:?} (expected drift, occlusion or distractor)"
                ))
            })
    }
}

fn wrap(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Deterministic synthetic video for `(family, length, seed)`.
pub fn generate_video(family: VideoFamily, length: usize, seed: u64) -> Result<VideoSpec> {
    if length < 2 {
        return Err(Error::config(format!(
            "video length must be at least 2, got {length}"
        )));
    }
    // family tag keeps streams independent across families with the same seed
    let stream = match family {
        VideoFamily::Drift => 0x9e37_79b9,
        VideoFamily::Occlusion => 0x85eb_ca6b,
        VideoFamily::Distractor => 0xc2b2_ae35,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (stream << 32));
    let frames = match family {
        VideoFamily::Drift => drift_frames(length, &mut rng),
        VideoFamily::Occlusion => occlusion_frames(length, &mut rng),
        VideoFamily::Distractor => distractor_frames(length, &mut rng),
    };
    VideoSpec::new(format!("{family}-{length}-{seed}"), frames)
}

fn difficulty(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.0..0.1)
}

fn drift_frames(length: usize, rng: &mut ChaCha8Rng) -> Vec<FrameSpec> {
    let step = Normal::new(0.0, 0.25).expect("valid sigma");
    let mut theta = rng.random_range(0.0..TAU);
    let mut frames = Vec::with_capacity(length);
    for _ in 0..length {
        frames.push(FrameSpec::visible(theta, difficulty(rng)));
        theta += step.sample(rng);
    }
    frames
}

fn occlusion_frames(length: usize, rng: &mut ChaCha8Rng) -> Vec<FrameSpec> {
    let step = Normal::new(0.0, 0.1).expect("valid sigma");
    let window = (length / 5).clamp(1, length - 1);
    let start = rng.random_range(1..=length - window);
    let mut theta = rng.random_range(0.0..TAU);
    let mut frames = Vec::with_capacity(length);
    for t in 0..length {
        if (start..start + window).contains(&t) {
            frames.push(FrameSpec {
                appearance: wrap(rng.random_range(0.0..TAU)),
                visible: false,
                difficulty: difficulty(rng),
                distractor_appearance: None,
            });
            if t + 1 == start + window {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                theta += sign * rng.random_range(1.0..2.0);
            }
        } else {
            frames.push(FrameSpec::visible(theta, difficulty(rng)));
            theta += step.sample(rng);
        }
    }
    frames
}

/// Cycles of: a short steady stretch, a fast appearance sweep, then an
/// invisible window whose distractor looks like the mid-sweep object. The
/// bank going into the window is far from the distractor, but any memory
/// taken inside the window encodes it and poisons the rest of the window.
fn distractor_frames(length: usize, rng: &mut ChaCha8Rng) -> Vec<FrameSpec> {
    const SWEEP: usize = 7;
    let jitter = Normal::new(0.0, 0.05).expect("valid sigma");
    let mut theta = rng.random_range(0.0..TAU);
    let mut frames = vec![FrameSpec::visible(theta, difficulty(rng))];
    while frames.len() < length {
        for _ in 0..rng.random_range(2..=3) {
            theta += jitter.sample(rng);
            frames.push(FrameSpec::visible(theta, difficulty(rng)));
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let rate = sign * rng.random_range(0.5..0.6);
        let sweep_start = theta;
        for _ in 0..SWEEP {
            theta += rate;
            frames.push(FrameSpec::visible(theta, difficulty(rng)));
        }
        let lure = wrap(sweep_start + 3.5 * rate + rng.random_range(-0.05..0.05));
        for _ in 0..rng.random_range(3..=4) {
            frames.push(FrameSpec {
                appearance: lure,
                visible: false,
                difficulty: difficulty(rng),
                distractor_appearance: Some(lure),
            });
        }
        theta += jitter.sample(rng);
    }
    frames.truncate(length);
    frames
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        for family in VideoFamily::ALL {
            let a = generate_video(family, 10, 42).unwrap();
            let b = generate_video(family, 10, 42).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.length, 10);
            assert_ne!(a, generate_video(family, 10, 43).unwrap());
        }
    }

    #[test]
    fn occlusion_has_invisible_frame() {
        for length in 2..40 {
            for seed in 0..5 {
                let v = generate_video(VideoFamily::Occlusion, length, seed).unwrap();
                assert!(
                    v.frames.iter().any(|f| !f.visible),
                    "length {length} seed {seed}"
                );
                assert!(v.frames.iter().all(|f| f.distractor_appearance.is_none()));
            }
        }
    }

    #[test]
    fn distractor_windows_carry_distractor() {
        let v = generate_video(VideoFamily::Distractor, 20, 7).unwrap();
        assert!(v.frames.iter().any(|f| !f.visible));
        for f in v.frames.iter().filter(|f| !f.visible) {
            assert!(f.distractor_appearance.is_some());
        }
    }

    #[test]
    fn short_length_rejected() {
        assert!(generate_video(VideoFamily::Drift, 1, 0).is_err());
        assert!(generate_video(VideoFamily::Drift, 2, 0).is_ok());
    }

    #[test]
    fn family_names_parse() {
        for family in VideoFamily::ALL {
            assert_eq!(family.name().parse::<VideoFamily>().unwrap(), family);
        }
        assert!("spiral".parse::<VideoFamily>().is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let v = generate_video(VideoFamily::Distractor, 30, 3).unwrap();
        assert_eq!(VideoSpec::from_json(&v.to_json()).unwrap(), v);

        let mut bad = v.clone();
        bad.length = 29;
        assert!(VideoSpec::from_json(&bad.to_json()).is_err());
        let mut bad = v;
        bad.frames[0].visible = false;
        assert!(VideoSpec::from_json(&bad.to_json()).is_err());
    }
}
