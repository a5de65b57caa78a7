use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    argmax, compute_gae, normalize, policy_forward, ppo_update, sample_action, Adam, PolicyParams,
    RolloutBatch, TrainConfig,
};
use crate::bank::Action;
use crate::env::{EpisodeTrace, TrackingEnv};
use crate::error::{Error, Result};
use crate::metrics::VideoMetrics;
use crate::policy::{run_episode, Decision, DecisionContext, Policy};
use crate::tracker::Tracker;

/// Samples from the current policy, recording log-probabilities and values.
pub struct SamplingPolicy<'a> {
    pub params: &'a PolicyParams,
    pub rng: &'a mut ChaCha8Rng,
}

impl Policy for SamplingPolicy<'_> {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _: &mut dyn Tracker) -> Result<Decision> {
        let (probs, value) = policy_forward(self.params, &ctx.observation.to_f64())?;
        let (index, log_prob) = sample_action(&probs, self.rng)?;
        Ok(Decision {
            action: Action::from_index(index, ctx.bank.capacity())?,
            log_prob: Some(log_prob),
            value: Some(value),
        })
    }
}

/// Deterministic evaluation: argmax over action probabilities.
pub struct GreedyPpoPolicy<'a> {
    pub params: &'a PolicyParams,
}

impl Policy for GreedyPpoPolicy<'_> {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _: &mut dyn Tracker) -> Result<Decision> {
        let (probs, value) = policy_forward(self.params, &ctx.observation.to_f64())?;
        let index = argmax(&probs);
        Ok(Decision {
            action: Action::from_index(index, ctx.bank.capacity())?,
            log_prob: Some(probs[index].ln()),
            value: Some(value),
        })
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub episodes: usize,
    pub samples: usize,
    pub mean_return: f64,
    pub mean_quality: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Training state for one video. Every iteration draws from its own
/// generator stream, so resuming from a checkpoint replays identically.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: PolicyParams,
    pub adam: Adam,
    /// Iterations completed so far.
    pub iteration: usize,
    pub history: Vec<IterationStats>,
}

impl Trainer {
    pub fn new(config: TrainConfig, video_length: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = PolicyParams::init(video_length, config.hidden, config.capacity, &mut rng);
        let adam = Adam::new(config.learning_rate, &params.tensor_sizes());
        Ok(Self {
            config,
            params,
            adam,
            iteration: 0,
            history: Vec::new(),
        })
    }

    fn iteration_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.iteration as u64 + 1);
        rng
    }

    fn check_env<T: Tracker>(&self, env: &TrackingEnv<T>) -> Result<()> {
        if env.video_length() != self.params.input_width() {
            return Err(Error::Dimension {
                what: "video length vs policy input",
                expected: self.params.input_width(),
                got: env.video_length(),
            });
        }
        if env.capacity() != self.config.capacity {
            return Err(Error::config(format!(
                "environment capacity {} differs from configured {}",
                env.capacity(),
                self.config.capacity
            )));
        }
        if env.video_length() <= env.capacity() {
            return Err(Error::config(format!(
                "video of length {} never fills a bank of capacity {}; nothing to learn",
                env.video_length(),
                env.capacity()
            )));
        }
        Ok(())
    }

    /// Collect, estimate advantages, update.
    pub fn run_iteration<T: Tracker>(
        &mut self,
        env: &mut TrackingEnv<T>,
    ) -> Result<IterationStats> {
        self.check_env(env)?;
        let mut rng = self.iteration_rng();
        let gamma = self.config.gamma;
        let mut batch = RolloutBatch::default();
        let mut returns = Vec::new();
        let mut qualities = Vec::new();
        while batch.len() < self.config.samples_per_iteration {
            let trace = run_episode(
                env,
                &mut SamplingPolicy {
                    params: &self.params,
                    rng: &mut rng,
                },
            )?;
            returns.push(trace.final_return);
            qualities.push(VideoMetrics::from_trace(&trace)?.quality);
            append_episode(&mut batch, &trace, gamma, self.config.gae_lambda)?;
        }
        if self.config.normalize_advantages {
            normalize(&mut batch.advantages);
        }
        let update = ppo_update(
            &mut self.params,
            &mut self.adam,
            &batch,
            &self.config,
            &mut rng,
        )?;
        let episodes = returns.len() as f64;
        let stats = IterationStats {
            iteration: self.iteration,
            episodes: returns.len(),
            samples: batch.len(),
            mean_return: returns.iter().sum::<f64>() / episodes,
            mean_quality: qualities.iter().sum::<f64>() / episodes,
            policy_loss: update.policy_loss,
            value_loss: update.value_loss,
            entropy: update.entropy,
            clip_fraction: update.clip_fraction,
            approx_kl: update.approx_kl,
        };
        self.iteration += 1;
        self.history.push(stats.clone());
        Ok(stats)
    }

    /// Runs the remaining iterations. Returns `false` if the time budget
    /// stopped training early.
    pub fn train<T: Tracker>(
        &mut self,
        env: &mut TrackingEnv<T>,
        mut on_iteration: impl FnMut(&IterationStats),
    ) -> Result<bool> {
        let started = Instant::now();
        while self.iteration < self.config.iterations {
            let stats = self.run_iteration(env)?;
            on_iteration(&stats);
            if let Some(budget) = self.config.time_budget_secs {
                if started.elapsed().as_secs_f64() > budget
                    && self.iteration < self.config.iterations
                {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn greedy_episode<T: Tracker>(&self, env: &mut TrackingEnv<T>) -> Result<EpisodeTrace> {
        run_episode(
            env,
            &mut GreedyPpoPolicy {
                params: &self.params,
            },
        )
    }
}

/// Adds the decision steps of `trace` to `batch` with GAE advantages.
/// Warm-up steps carry no action choice and are left out; the decision
/// steps form a suffix of the episode, so nothing after them is dropped.
fn append_episode(
    batch: &mut RolloutBatch,
    trace: &EpisodeTrace,
    gamma: f64,
    lambda: f64,
) -> Result<()> {
    let steps: Vec<_> = trace.decisions().collect();
    if steps.is_empty() {
        return Ok(());
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let values: Vec<f64> = steps
        .iter()
        .map(|s| {
            s.value
                .ok_or_else(|| Error::invariant("sampled step without a value estimate"))
        })
        .collect::<Result<_>>()?;
    let (advantages, returns) = compute_gae(&rewards, &values, 0.0, gamma, lambda)?;
    batch.episode_starts.push(batch.len());
    for (step, (adv, ret)) in steps.iter().zip(advantages.into_iter().zip(returns)) {
        batch.observations.push(step.observation.to_f64());
        batch
            .actions
            .push(step.action.expect("decision step").index());
        batch.old_log_probs.push(
            step.log_prob
                .ok_or_else(|| Error::invariant("sampled step without a log-probability"))?,
        );
        batch.advantages.push(adv);
        batch.returns.push(ret);
    }
    Ok(())
}

/// Trains a fresh policy on one environment for `config.iterations`.
pub fn train<T: Tracker>(
    env: &mut TrackingEnv<T>,
    config: TrainConfig,
) -> Result<(PolicyParams, Vec<IterationStats>)> {
    let mut trainer = Trainer::new(config, env.video_length())?;
    trainer.train(env, |_| {})?;
    Ok((trainer.params, trainer.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::dp_oracle;
    use crate::env::enumerate_reachable_states;
    use crate::tracker::{ScriptedTable, ScriptedTracker};

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: 30,
            samples_per_iteration: 256,
            minibatch_size: 64,
            hidden: 32,
            capacity: 2,
            learning_rate: 3e-3,
            seed,
            ..TrainConfig::default()
        }
    }

    fn pivotal_env() -> TrackingEnv<ScriptedTracker> {
        let table = ScriptedTable::new(
            4,
            2,
            [
                ((1, vec![0]), (0.6, false)),
                ((2, vec![0, 1]), (0.7, false)),
                ((3, vec![0, 1]), (1.0, false)),
                ((3, vec![0, 2]), (0.2, false)),
            ],
        )
        .unwrap();
        TrackingEnv::new(ScriptedTracker::new("pivotal", table), 2, 1.0).unwrap()
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let a = train(&mut pivotal_env(), small_config(3)).unwrap();
        let b = train(&mut pivotal_env(), small_config(3)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let full = train(&mut pivotal_env(), small_config(4)).unwrap();
        let mut env = pivotal_env();
        let mut first = Trainer::new(
            TrainConfig {
                iterations: 12,
                ..small_config(4)
            },
            4,
        )
        .unwrap();
        first.train(&mut env, |_| {}).unwrap();
        let mut resumed = first.clone();
        resumed.config.iterations = 30;
        resumed.train(&mut env, |_| {}).unwrap();
        assert_eq!(resumed.history, full.1);
        assert_eq!(resumed.params, full.0);
    }

    #[test]
    fn learns_pivotal_keep() {
        let mut env = pivotal_env();
        let (params, _) = train(&mut env, small_config(1)).unwrap();
        let trace = run_episode(&mut env, &mut GreedyPpoPolicy { params: &params }).unwrap();
        let oracle = dp_oracle(env.tracker_mut(), 2, 1.0, 1000).unwrap();
        assert!(trace.final_return >= 0.95 * oracle.optimal_return);
    }

    #[test]
    fn learns_all_discard() {
        // reward 1 for the warm-up bank, decaying as newer frames replace it
        let (t_len, n) = (7, 3);
        let entries = enumerate_reachable_states(t_len, n, 10_000)
            .unwrap()
            .into_iter()
            .map(|s| {
                let newer: usize = s.frames.iter().sum::<usize>().saturating_sub(3);
                let q = if s.frames.len() < n {
                    1.0
                } else {
                    (-(newer as f64) / 2.0).exp()
                };
                ((s.t, s.frames), (q, false))
            });
        let table = ScriptedTable::new(t_len, n, entries).unwrap();
        let mut env = TrackingEnv::new(ScriptedTracker::new("keep", table), n, 1.0).unwrap();
        let config = TrainConfig {
            capacity: n,
            ..small_config(2)
        };
        let (params, _) = train(&mut env, config).unwrap();
        let oracle = dp_oracle(env.tracker_mut(), n, 1.0, 10_000).unwrap();
        assert!(oracle.policy.values().all(|a| *a == Action::Discard));
        // greedy policy on every reachable decision state
        let mut agree = 0;
        for state in oracle.policy.keys() {
            let obs = state
                .bank(n)
                .unwrap()
                .encode_observation(state.t, t_len)
                .unwrap();
            let (probs, _) = policy_forward(&params, &obs.to_f64()).unwrap();
            agree += usize::from(argmax(&probs) == 0);
        }
        assert!(
            agree as f64 >= 0.99 * oracle.policy.len() as f64,
            "{agree}/{}",
            oracle.policy.len()
        );
    }

    #[test]
    fn too_short_video_rejected() {
        let table = ScriptedTable::new(2, 2, [((1, vec![0]), (1.0, false))]).unwrap();
        let mut env = TrackingEnv::new(ScriptedTracker::new("short", table), 2, 1.0).unwrap();
        let mut trainer = Trainer::new(small_config(0), 2).unwrap();
        assert!(trainer.run_iteration(&mut env).is_err());
    }
}
