//! Reference memory-update rules and the exact backward-induction oracle.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bank::{Action, MemoryBank, MemoryEntry};
use crate::env::{enumerate_reachable_states, validate_gamma, EnvState};
use crate::error::{Error, Result};
use crate::policy::{Decision, DecisionContext, Policy};
use crate::tracker::Tracker;

/// Replace the oldest dynamic memory, keeping frame 0 plus the most recent
/// `N-1` frames.
pub fn fifo_action(bank: &MemoryBank) -> Result<Action> {
    if !bank.is_full() {
        return Err(Error::precondition("FIFO decides only on a full bank"));
    }
    let (slot, _) = bank
        .slots()
        .iter()
        .enumerate()
        .skip(1)
        .min_by_key(|(_, e)| e.frame_index)
        .expect("capacity >= 2");
    Action::replace(slot)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FifoPolicy;

impl Policy for FifoPolicy {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _: &mut dyn Tracker) -> Result<Decision> {
        fifo_action(ctx.bank).map(Decision::from)
    }
}

/// Uniform over all `N` actions.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self, capacity: usize) -> Action {
        Action::from_index(self.rng.random_range(0..capacity), capacity).expect("index < capacity")
    }
}

impl Policy for RandomPolicy {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _: &mut dyn Tracker) -> Result<Decision> {
        Ok(self.sample(ctx.bank.capacity()).into())
    }
}

/// One-step lookahead: the action maximizing the next frame's quality.
/// Ties go to `Discard`, then the lowest slot.
#[derive(Debug, Default, Clone, Copy)]
pub struct GreedyPolicy;

pub fn greedy_action(t: usize, bank: &MemoryBank, tracker: &mut dyn Tracker) -> Result<Action> {
    if !tracker.supports_counterfactual() {
        return Err(Error::Unsupported(
            "greedy lookahead needs a tracker that can be queried counterfactually".into(),
        ));
    }
    let incoming = MemoryEntry::for_frame(t);
    let next_t = t + 1;
    let mut best = (Action::Discard, f64::NEG_INFINITY);
    for action in Action::all(bank.capacity()) {
        let next = bank.apply_action(action, incoming)?;
        let q = if next_t < tracker.video_length() {
            tracker.predict(next_t, &next)?.q
        } else {
            0.0
        };
        if q > best.1 {
            best = (action, q);
        }
    }
    Ok(best.0)
}

impl Policy for GreedyPolicy {
    fn decide(&mut self, ctx: &DecisionContext<'_>, tracker: &mut dyn Tracker) -> Result<Decision> {
        greedy_action(ctx.t, ctx.bank, tracker).map(Decision::from)
    }
}

/// Exact optimum of the memory-control problem for a deterministic tracker.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub optimal_return: f64,
    /// Optimal action at every reachable decision state.
    pub policy: BTreeMap<EnvState, Action>,
    /// Optimal value-to-go at every reachable state.
    pub values: BTreeMap<EnvState, f64>,
}

impl OracleSolution {
    /// `t<TAB>bank<TAB>action` per decision state, ordered by state.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (state, action) in &self.policy {
            let bank: Vec<String> = state.frames.iter().map(|f| f.to_string()).collect();
            writeln!(out, "{}\t{}\t{}", state.t, bank.join(","), action).expect("write to string");
        }
        out
    }

    pub fn as_policy(&self) -> OraclePolicy<'_> {
        OraclePolicy { solution: self }
    }
}

/// Backward induction over all reachable states:
/// `V(s, t) = q_t(s) + γ · max_a V(step(s, a), t + 1)` with `V(·, T) = 0`.
pub fn dp_oracle(
    tracker: &mut dyn Tracker,
    capacity: usize,
    gamma: f64,
    budget: usize,
) -> Result<OracleSolution> {
    validate_gamma(gamma)?;
    if !tracker.supports_counterfactual() {
        return Err(Error::Unsupported(
            "the oracle needs a deterministic, counterfactually queryable tracker".into(),
        ));
    }
    let length = tracker.video_length();
    let states = enumerate_reachable_states(length, capacity, budget)?;
    let mut values: HashMap<EnvState, f64> = HashMap::with_capacity(states.len());
    let mut policy = BTreeMap::new();
    // states are grouped by ascending t
    for state in states.iter().rev() {
        let bank = state.bank(capacity)?;
        let q = tracker.predict(state.t, &bank)?.q;
        let mut best: Option<(Option<Action>, f64)> = None;
        for (action, next) in state.successors(capacity)? {
            let v = if next.t < length { values[&next] } else { 0.0 };
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((action, v));
            }
        }
        let (action, future) = best.expect("every state has a successor");
        if let Some(action) = action {
            policy.insert(state.clone(), action);
        }
        values.insert(state.clone(), q + gamma * future);
    }
    let root = EnvState {
        t: 1,
        frames: vec![0],
    };
    Ok(OracleSolution {
        optimal_return: values[&root],
        policy,
        values: values.into_iter().collect(),
    })
}

pub struct OraclePolicy<'a> {
    solution: &'a OracleSolution,
}

impl Policy for OraclePolicy<'_> {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _: &mut dyn Tracker) -> Result<Decision> {
        let state = EnvState {
            t: ctx.t,
            frames: ctx.bank.frames(),
        };
        self.solution
            .policy
            .get(&state)
            .copied()
            .map(Decision::from)
            .ok_or(Error::MissingKey {
                t: ctx.t,
                bank: state.frames,
            })
    }
}
