//! Quality functions standing in for a frozen segmentation tracker.
//!
//! A [`Tracker`] scores frame `t` given the memory bank as it stood before
//! frame `t`'s own memory was inserted.

mod scripted;
mod sim;
mod video;

pub use scripted::{ScriptedTable, ScriptedTracker};
pub use sim::{simulate, SimParams, SyntheticTracker};
pub use video::{generate_video, FrameSpec, VideoFamily, VideoSpec};

use crate::bank::MemoryBank;
use crate::error::Result;

/// One frame's tracker output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Per-frame quality in `[0, 1]`.
    pub q: f64,
    pub predicted_empty: bool,
    /// Ground-truth emptiness when the tracker knows it, otherwise inferred
    /// from the empty-empty case (`predicted_empty && q == 1`).
    pub gt_empty: bool,
}

impl Prediction {
    /// Builds a prediction when only `(q, predicted_empty)` is known.
    pub fn inferred(q: f64, predicted_empty: bool) -> Self {
        Self {
            q,
            predicted_empty,
            gt_empty: predicted_empty && q == 1.0,
        }
    }
}

pub trait Tracker {
    fn video_id(&self) -> &str;

    fn video_length(&self) -> usize;

    /// Called by the environment on every reset.
    fn begin_episode(&mut self, _capacity: usize) -> Result<()> {
        Ok(())
    }

    fn predict(&mut self, t: usize, bank: &MemoryBank) -> Result<Prediction>;

    /// Whether `predict` may be queried for arbitrary states out of episode
    /// order with deterministic answers (required by lookahead and the oracle).
    fn supports_counterfactual(&self) -> bool {
        true
    }
}

impl<T: Tracker + ?Sized> Tracker for Box<T> {
    fn video_id(&self) -> &str {
        (**self).video_id()
    }

    fn video_length(&self) -> usize {
        (**self).video_length()
    }

    fn begin_episode(&mut self, capacity: usize) -> Result<()> {
        (**self).begin_episode(capacity)
    }

    fn predict(&mut self, t: usize, bank: &MemoryBank) -> Result<Prediction> {
        (**self).predict(t, bank)
    }

    fn supports_counterfactual(&self) -> bool {
        (**self).supports_counterfactual()
    }
}
