use crate::bank::{Action, MemoryBank, Observation};
use crate::env::{episode_return, EpisodeTrace, TraceStep, TrackingEnv};
use crate::error::Result;
use crate::tracker::Tracker;

/// What a policy sees when the bank is full and a decision is due.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub t: usize,
    pub video_length: usize,
    pub bank: &'a MemoryBank,
    pub observation: &'a Observation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub log_prob: Option<f64>,
    pub value: Option<f64>,
}

impl From<Action> for Decision {
    fn from(action: Action) -> Self {
        Self {
            action,
            log_prob: None,
            value: None,
        }
    }
}

/// A memory-update rule. Lookahead policies may query the tracker.
pub trait Policy {
    fn decide(&mut self, ctx: &DecisionContext<'_>, tracker: &mut dyn Tracker) -> Result<Decision>;
}

/// Resets `env` and plays one full episode under `policy`.
pub fn run_episode<T: Tracker>(
    env: &mut TrackingEnv<T>,
    policy: &mut dyn Policy,
) -> Result<EpisodeTrace> {
    let mut observation = env.reset()?;
    let mut steps = Vec::with_capacity(env.video_length() - 1);
    loop {
        let t = env.t();
        let decision = if env.needs_decision() {
            let bank = env.bank().clone();
            let ctx = DecisionContext {
                t,
                video_length: env.video_length(),
                bank: &bank,
                observation: &observation,
            };
            Some(policy.decide(&ctx, env.tracker_mut())?)
        } else {
            None
        };
        let action = decision.map_or(Action::Discard, |d| d.action);
        let outcome = env.step(action)?;
        steps.push(TraceStep {
            t,
            observation,
            action: decision.map(|d| d.action),
            log_prob: decision.and_then(|d| d.log_prob),
            value: decision.and_then(|d| d.value),
            reward: outcome.reward,
            info: outcome.info,
        });
        match outcome.observation {
            Some(next) => observation = next,
            None => break,
        }
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    Ok(EpisodeTrace {
        video_id: env.tracker().video_id().to_string(),
        final_return: episode_return(&rewards, env.gamma())?,
        steps,
    })
}

/// Plays a fixed action sequence (one entry per decision step).
pub struct Scripted {
    actions: std::vec::IntoIter<Action>,
}

impl Scripted {
    pub fn new(actions: Vec<Action>) -> Self {
        Self {
            actions: actions.into_iter(),
        }
    }
}

impl Policy for Scripted {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _: &mut dyn Tracker) -> Result<Decision> {
        self.actions.next().map(Decision::from).ok_or_else(|| {
            crate::error::Error::precondition(format!("action script exhausted at t={}", ctx.t))
        })
    }
}
