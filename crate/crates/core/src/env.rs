//! Episodic environment: one episode tracks one video from frame 1 to T-1.
//!
//! Frame 0 carries the prompt and is never stepped. At step `t` the tracker
//! scores frame `t` against the current bank, then frame `t`'s memory is
//! either auto-appended (warm-up, bank not yet full) or handled by the
//! controller's action.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::bank::{Action, MemoryBank, MemoryEntry, Observation};
use crate::error::{Error, Result};
use crate::tracker::{Prediction, Tracker};

pub const DEFAULT_STATE_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub q: f64,
    pub predicted_empty: bool,
    pub gt_empty: bool,
    /// The bank had free slots; the action was ignored.
    pub warmup: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// `None` once the episode is done.
    pub observation: Option<Observation>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub fn validate_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "gamma",
            value: gamma.to_string(),
            valid: "(0, 1]".into(),
        })
    }
}

pub struct TrackingEnv<T> {
    tracker: T,
    capacity: usize,
    gamma: f64,
    length: usize,
    bank: MemoryBank,
    t: usize,
}

impl<T: Tracker> TrackingEnv<T> {
    /// Builds the environment and performs the first reset.
    pub fn new(tracker: T, capacity: usize, gamma: f64) -> Result<Self> {
        let length = tracker.video_length();
        if length < 2 {
            return Err(Error::config(format!(
                "video {} has length {length}; at least 2 frames are needed",
                tracker.video_id()
            )));
        }
        validate_gamma(gamma)?;
        let bank = MemoryBank::new(capacity, MemoryEntry::for_frame(0))?;
        let mut env = Self {
            tracker,
            capacity,
            gamma,
            length,
            bank,
            t: 1,
        };
        env.reset()?;
        Ok(env)
    }

    pub fn reset(&mut self) -> Result<Observation> {
        self.tracker.begin_episode(self.capacity)?;
        self.bank = MemoryBank::new(self.capacity, MemoryEntry::for_frame(0))?;
        self.t = 1;
        self.bank.encode_observation(self.t, self.length)
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.length
    }

    /// True when the next step's action will be applied (the bank is full).
    pub fn needs_decision(&self) -> bool {
        !self.is_done() && self.bank.is_full()
    }

    pub fn observation(&self) -> Result<Observation> {
        self.bank.encode_observation(self.t, self.length)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::precondition(
                "step called after the episode finished",
            ));
        }
        let prediction = self.tracker.predict(self.t, &self.bank)?;
        check_prediction(&prediction, self.t)?;
        let incoming = MemoryEntry::for_frame(self.t);
        let warmup = !self.bank.is_full();
        self.bank = if warmup {
            self.bank.auto_append(incoming)?
        } else {
            self.bank.apply_action(action, incoming)?
        };
        self.t += 1;
        let done = self.is_done();
        let observation = if done {
            None
        } else {
            Some(self.observation()?)
        };
        Ok(StepOutcome {
            observation,
            reward: prediction.q,
            done,
            info: StepInfo {
                q: prediction.q,
                predicted_empty: prediction.predicted_empty,
                gt_empty: prediction.gt_empty,
                warmup,
            },
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn video_length(&self) -> usize {
        self.length
    }

    pub fn tracker(&self) -> &T {
        &self.tracker
    }

    pub fn tracker_mut(&mut self) -> &mut T {
        &mut self.tracker
    }

    pub fn into_tracker(self) -> T {
        self.tracker
    }
}

fn check_prediction(p: &Prediction, t: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&p.q) {
        return Err(Error::OutOfRange {
            what: "tracker quality",
            value: format!("{} at t={t}", p.q),
            valid: "[0, 1]".into(),
        });
    }
    Ok(())
}

/// One recorded step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub observation: Observation,
    /// `None` for warm-up steps.
    #[serde(with = "opt_action")]
    pub action: Option<Action>,
    pub log_prob: Option<f64>,
    pub value: Option<f64>,
    pub reward: f64,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub video_id: String,
    pub steps: Vec<TraceStep>,
    pub final_return: f64,
}

impl EpisodeTrace {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn decisions(&self) -> impl Iterator<Item = &TraceStep> {
        self.steps.iter().filter(|s| s.action.is_some())
    }
}

/// `Σ_{t=1}^{len} γ^{t-1} r_t`, accumulated back to front.
pub fn episode_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::precondition("episode return of an empty trace"));
    }
    validate_gamma(gamma)?;
    Ok(rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc))
}

/// A reachable decision point: the bank (slot order preserved) at timestep `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnvState {
    pub t: usize,
    pub frames: Vec<usize>,
}

impl EnvState {
    pub fn bank(&self, capacity: usize) -> Result<MemoryBank> {
        MemoryBank::from_frames(capacity, &self.frames)
    }

    /// Next states paired with the action producing them; a single `None`
    /// entry during warm-up.
    pub fn successors(&self, capacity: usize) -> Result<Vec<(Option<Action>, EnvState)>> {
        let bank = self.bank(capacity)?;
        let incoming = MemoryEntry::for_frame(self.t);
        let t = self.t + 1;
        if !bank.is_full() {
            let next = bank.auto_append(incoming)?;
            return Ok(vec![(
                None,
                EnvState {
                    t,
                    frames: next.frames(),
                },
            )]);
        }
        Action::all(capacity)
            .map(|a| {
                let next = bank.apply_action(a, incoming)?;
                Ok((
                    Some(a),
                    EnvState {
                        t,
                        frames: next.frames(),
                    },
                ))
            })
            .collect()
    }
}

/// Every `(bank, t)` reachable from reset, grouped by timestep in ascending
/// order; `t` ranges over `1..video_length`.
pub fn enumerate_reachable_states(
    video_length: usize,
    capacity: usize,
    budget: usize,
) -> Result<Vec<EnvState>> {
    if video_length < 2 {
        return Err(Error::config(format!(
            "video length must be at least 2, got {video_length}"
        )));
    }
    MemoryBank::new(capacity, MemoryEntry::for_frame(0))?;
    let mut layer: BTreeSet<EnvState> = BTreeSet::new();
    layer.insert(EnvState {
        t: 1,
        frames: vec![0],
    });
    let mut all = Vec::new();
    loop {
        if all.len() + layer.len() > budget {
            return Err(Error::BudgetExceeded { budget });
        }
        let t = layer.first().map(|s| s.t).unwrap_or(video_length);
        if t + 1 >= video_length {
            all.extend(layer);
            return Ok(all);
        }
        let mut next = BTreeSet::new();
        for state in &layer {
            for (_, succ) in state.successors(capacity)? {
                next.insert(succ);
            }
        }
        all.extend(std::mem::take(&mut layer));
        layer = next;
    }
}

mod opt_action {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::bank::Action;

    pub fn serialize<S: Serializer>(action: &Option<Action>, s: S) -> Result<S::Ok, S::Error> {
        action.map(|a| a.to_string()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Action>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::{Prediction, Tracker};

    /// Returns a fixed reward per timestep regardless of the bank.
    struct Fixed {
        rewards: Vec<f64>,
    }

    impl Tracker for Fixed {
        fn video_id(&self) -> &str {
            "fixed"
        }
        fn video_length(&self) -> usize {
            self.rewards.len() + 1
        }
        fn predict(&mut self, t: usize, _bank: &MemoryBank) -> Result<Prediction> {
            Ok(Prediction::inferred(self.rewards[t - 1], false))
        }
    }

    #[test]
    fn reset_observation() {
        let mut env = TrackingEnv::new(
            Fixed {
                rewards: vec![0.5; 3],
            },
            7,
            1.0,
        )
        .unwrap();
        assert_eq!(env.reset().unwrap().bits(), &[1, 1, 0, 0]);
    }

    #[test]
    fn reset_rejects_bad_inputs() {
        assert!(TrackingEnv::new(
            Fixed {
                rewards: vec![0.5; 3]
            },
            7,
            0.0
        )
        .is_err());
        assert!(TrackingEnv::new(
            Fixed {
                rewards: vec![0.5; 3]
            },
            7,
            1.5
        )
        .is_err());
        assert!(TrackingEnv::new(Fixed { rewards: vec![] }, 7, 1.0).is_err());
    }

    #[test]
    fn rewards_pass_through_and_episode_ends() {
        let mut env = TrackingEnv::new(
            Fixed {
                rewards: vec![0.5, 0.25, 1.0],
            },
            2,
            1.0,
        )
        .unwrap();
        let mut rewards = Vec::new();
        loop {
            let out = env.step(Action::Discard).unwrap();
            assert_eq!(out.reward, out.info.q);
            rewards.push(out.reward);
            if out.done {
                assert!(out.observation.is_none());
                break;
            }
        }
        assert_eq!(rewards, vec![0.5, 0.25, 1.0]);
        assert_eq!(episode_return(&rewards, 1.0).unwrap(), 1.75);
        assert!(matches!(
            env.step(Action::Discard),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn warmup_steps_flagged() {
        let mut env = TrackingEnv::new(
            Fixed {
                rewards: vec![1.0; 6],
            },
            3,
            1.0,
        )
        .unwrap();
        let flags: Vec<bool> = (0..6)
            .map(|_| env.step(Action::replace(1).unwrap()).unwrap().info.warmup)
            .collect();
        assert_eq!(flags, vec![true, true, false, false, false, false]);
    }

    #[test]
    fn returns() {
        assert_eq!(episode_return(&[1.0, 1.0, 1.0], 1.0).unwrap(), 3.0);
        assert_eq!(episode_return(&[1.0, 1.0, 1.0], 0.5).unwrap(), 1.75);
        assert!(episode_return(&[], 1.0).is_err());
    }

    #[test]
    fn enumeration_small_cases() {
        let states = enumerate_reachable_states(3, 2, 100).unwrap();
        assert_eq!(
            states,
            vec![
                EnvState {
                    t: 1,
                    frames: vec![0]
                },
                EnvState {
                    t: 2,
                    frames: vec![0, 1]
                },
            ]
        );

        let states = enumerate_reachable_states(4, 2, 100).unwrap();
        assert_eq!(states.len(), 4);
        let last: Vec<_> = states
            .iter()
            .filter(|s| s.t == 3)
            .map(|s| s.frames.clone())
            .collect();
        assert_eq!(last, vec![vec![0, 1], vec![0, 2]]);

        assert_eq!(enumerate_reachable_states(2, 7, 100).unwrap().len(), 1);
    }

    #[test]
    fn enumeration_budget() {
        let err = enumerate_reachable_states(12, 4, 50).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { budget: 50 }));
        assert!(err.to_string().contains("50"));
    }

    #[test]
    fn enumeration_closed_under_step() {
        let states = enumerate_reachable_states(8, 3, 10_000).unwrap();
        let set: BTreeSet<_> = states.iter().cloned().collect();
        for s in &states {
            for (_, next) in s.successors(3).unwrap() {
                if next.t < 8 {
                    assert!(set.contains(&next), "{next:?} missing");
                }
            }
        }
    }
}
