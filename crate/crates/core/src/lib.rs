//! Memory-bank update control for video object trackers, posed as a
//! sequential decision problem.
//!
//! A [`MemoryBank`] holds up to N reference frames. At every frame the
//! tracker predicts using the bank, then a policy decides whether the new
//! frame replaces one of the stored ones. Policies here include FIFO,
//! random, greedy, an exact dynamic-programming oracle and PPO.

pub mod bank;
pub mod baselines;
pub mod bridge;
pub mod env;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod ppo;
pub mod tracker;

pub use bank::{Action, MemoryBank, MemoryEntry, Observation, Slot, DEFAULT_CAPACITY};
pub use env::{EpisodeTrace, TrackingEnv};
pub use error::{Error, Result};
pub use policy::{run_episode, Policy};
pub use tracker::{Prediction, Tracker};
