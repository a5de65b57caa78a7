//! Proximal policy optimization for the memory controller.
//!
//! Policy and value function are separate two-layer ReLU perceptrons over
//! the binary observation. Gradients are exact backpropagation; the
//! optimizer is Adam.

mod adam;
mod checkpoint;
mod gae;
mod mlp;
mod train;
mod update;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use gae::{compute_gae, normalize};
pub use mlp::{Activations, Mlp};
pub use train::{train, GreedyPpoPolicy, IterationStats, SamplingPolicy, Trainer};
pub use update::{
    loss_and_grad, ppo_update, LossCoefficients, LossTerms, RolloutBatch, UpdateStats,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bank::DEFAULT_CAPACITY;
use crate::env::validate_gamma;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Decision steps collected per iteration (whole episodes, so the batch
    /// may overshoot by less than one episode).
    pub samples_per_iteration: usize,
    pub epochs_per_iteration: usize,
    pub minibatch_size: usize,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub normalize_advantages: bool,
    pub seed: u64,
    pub hidden: usize,
    /// Memory bank capacity N; also the number of actions.
    pub capacity: usize,
    /// Stop (after the current iteration) once this much wall-clock time has passed.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            samples_per_iteration: 16_384,
            epochs_per_iteration: 2,
            minibatch_size: 256,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            gae_lambda: 0.95,
            gamma: 1.0,
            entropy_coef: 0.01,
            value_coef: 0.5,
            normalize_advantages: true,
            seed: 0,
            hidden: 1024,
            capacity: DEFAULT_CAPACITY,
            time_budget_secs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn positive(what: &'static str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::OutOfRange {
                    what,
                    value: "0".into(),
                    valid: "> 0".into(),
                });
            }
            Ok(())
        }
        fn real(what: &'static str, v: f64, ok: bool, valid: &str) -> Result<()> {
            if !ok || !v.is_finite() {
                return Err(Error::OutOfRange {
                    what,
                    value: v.to_string(),
                    valid: valid.into(),
                });
            }
            Ok(())
        }
        positive("iterations", self.iterations)?;
        positive("samples_per_iteration", self.samples_per_iteration)?;
        positive("epochs_per_iteration", self.epochs_per_iteration)?;
        positive("minibatch_size", self.minibatch_size)?;
        positive("hidden", self.hidden)?;
        if self.capacity < 2 {
            return Err(Error::OutOfRange {
                what: "capacity",
                value: self.capacity.to_string(),
                valid: ">= 2".into(),
            });
        }
        let eps = self.clip_epsilon;
        real("clip_epsilon", eps, eps > 0.0 && eps < 1.0, "(0, 1)")?;
        real(
            "learning_rate",
            self.learning_rate,
            self.learning_rate > 0.0,
            "> 0",
        )?;
        let lam = self.gae_lambda;
        real("gae_lambda", lam, (0.0..=1.0).contains(&lam), "[0, 1]")?;
        real(
            "entropy_coef",
            self.entropy_coef,
            self.entropy_coef >= 0.0,
            ">= 0",
        )?;
        real("value_coef", self.value_coef, self.value_coef > 0.0, "> 0")?;
        if let Some(b) = self.time_budget_secs {
            real("time_budget_secs", b, b > 0.0, "> 0")?;
        }
        validate_gamma(self.gamma)
    }

    pub fn coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            clip_epsilon: self.clip_epsilon,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
        }
    }
}

/// Policy and value networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub policy: Mlp,
    pub value: Mlp,
}

impl PolicyParams {
    /// Orthogonal init; the policy head is scaled by 0.01 so the initial
    /// policy is near-uniform.
    pub fn init<R: Rng + ?Sized>(
        video_length: usize,
        hidden: usize,
        actions: usize,
        rng: &mut R,
    ) -> Self {
        let gain = std::f64::consts::SQRT_2;
        Self {
            policy: Mlp::orthogonal(video_length, hidden, actions, gain, 0.01, rng),
            value: Mlp::orthogonal(video_length, hidden, 1, gain, 1.0, rng),
        }
    }

    pub fn zeros(video_length: usize, hidden: usize, actions: usize) -> Self {
        Self {
            policy: Mlp::zeros(video_length, hidden, actions),
            value: Mlp::zeros(video_length, hidden, 1),
        }
    }

    pub fn input_width(&self) -> usize {
        self.policy.inputs
    }

    pub fn actions(&self) -> usize {
        self.policy.outputs
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|(_, t)| t.len()).collect()
    }

    /// Named views of all eight trainable tensors.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let p = self
            .policy
            .tensors()
            .map(|(n, t)| (format!("policy.{n}"), t));
        let v = self.value.tensors().map(|(n, t)| (format!("value.{n}"), t));
        p.into_iter().chain(v).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let [a, b, c, d] = self.policy.tensors_mut();
        let [e, f, g, h] = self.value.tensors_mut();
        vec![a, b, c, d, e, f, g, h]
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Action distribution and state value for one observation.
pub fn policy_forward(params: &PolicyParams, obs: &[f64]) -> Result<(Vec<f64>, f64)> {
    let logits = params.policy.forward(obs)?.out;
    let probs = log_softmax(&logits).into_iter().map(f64::exp).collect();
    let value = params.value.forward(obs)?.out[0];
    Ok((probs, value))
}

/// Draws an action index; returns it with its log-probability.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<(usize, f64)> {
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::invariant(format!(
            "action probabilities do not form a distribution (sum {total})"
        )));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        chosen = Some(i);
        acc += p;
        if u < acc {
            break;
        }
    }
    let index = chosen.expect("a distribution has positive mass");
    Ok((index, probs[index].ln()))
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
