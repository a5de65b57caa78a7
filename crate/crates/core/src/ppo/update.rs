use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{log_softmax, Adam, PolicyParams, TrainConfig};
use crate::error::{Error, Result};

/// Flattened decision steps from one or more episodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Offsets where each episode's samples begin.
    pub episode_starts: Vec<usize>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.actions.len();
        for (what, len) in [
            ("batch observations", self.observations.len()),
            ("batch old_log_probs", self.old_log_probs.len()),
            ("batch advantages", self.advantages.len()),
            ("batch returns", self.returns.len()),
        ] {
            if len != n {
                return Err(Error::Dimension {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// Minibatch means of the loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Clipped-surrogate PPO loss over `indices` of `batch`:
///
/// `mean(-min(ρA, clip(ρ, 1-ε, 1+ε)A)) + c_v·mean((V - R)²) - c_e·mean(H)`
///
/// With `want_grad`, also returns `∂loss/∂θ` for every parameter.
pub fn loss_and_grad(
    params: &PolicyParams,
    batch: &RolloutBatch,
    indices: &[usize],
    coef: &LossCoefficients,
    want_grad: bool,
) -> Result<(LossTerms, Option<PolicyParams>)> {
    if indices.is_empty() {
        return Err(Error::precondition("loss over an empty minibatch"));
    }
    let scale = 1.0 / indices.len() as f64;
    let eps = coef.clip_epsilon;
    let mut grad = want_grad
        .then(|| PolicyParams::zeros(params.input_width(), params.policy.hidden, params.actions()));
    let mut terms = LossTerms::default();
    let mut clipped = 0usize;

    for &i in indices {
        let x = &batch.observations[i];
        let a = batch.actions[i];
        let adv = batch.advantages[i];

        let pact = params.policy.forward(x)?;
        let logp = log_softmax(&pact.out);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let entropy = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();

        let ratio = (logp[a] - batch.old_log_probs[i]).exp();
        let unclipped = ratio * adv;
        let clipped_obj = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        let surrogate = unclipped.min(clipped_obj);
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }

        let vact = params.value.forward(x)?;
        let value_err = vact.out[0] - batch.returns[i];

        terms.policy_loss -= surrogate;
        terms.value_loss += value_err * value_err;
        terms.entropy += entropy;
        terms.approx_kl += (ratio - 1.0) - ratio.ln();

        if let Some(g) = grad.as_mut() {
            // ∂(-surrogate)/∂log π(a): only the unclipped branch carries gradient
            let d_logp = if unclipped <= clipped_obj {
                -unclipped
            } else {
                0.0
            };
            let d_logits: Vec<f64> = probs
                .iter()
                .zip(&logp)
                .enumerate()
                .map(|(j, (&p, &l))| {
                    let onehot = if j == a { 1.0 } else { 0.0 };
                    scale * (d_logp * (onehot - p) + coef.entropy_coef * p * (l + entropy))
                })
                .collect();
            params.policy.backward(x, &pact, &d_logits, &mut g.policy);
            let d_value = [scale * coef.value_coef * 2.0 * value_err];
            params.value.backward(x, &vact, &d_value, &mut g.value);
        }
    }

    terms.policy_loss *= scale;
    terms.value_loss *= scale;
    terms.entropy *= scale;
    terms.approx_kl *= scale;
    terms.clip_fraction = clipped as f64 * scale;
    terms.total =
        terms.policy_loss + coef.value_coef * terms.value_loss - coef.entropy_coef * terms.entropy;

    for (name, v) in [
        ("policy_loss", terms.policy_loss),
        ("value_loss", terms.value_loss),
        ("entropy", terms.entropy),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.into() });
        }
    }
    if let Some(g) = &grad {
        for (name, t) in g.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    term: format!("gradient of {name}"),
                });
            }
        }
    }
    Ok((terms, grad))
}

/// Averages over all minibatch steps of one update call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
}

/// Runs `epochs_per_iteration` passes of shuffled minibatch Adam steps.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    adam: &mut Adam,
    batch: &RolloutBatch,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::precondition("PPO update on an empty batch"));
    }
    batch.check()?;
    let coef = config.coefficients();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..config.epochs_per_iteration {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size.max(1)) {
            let (terms, grad) = loss_and_grad(params, batch, chunk, &coef, true)?;
            let grad = grad.expect("gradient requested");
            let grads: Vec<&[f64]> = grad.tensors().into_iter().map(|(_, t)| t).collect();
            adam.step(&mut params.tensors_mut(), &grads);
            stats.policy_loss += terms.policy_loss;
            stats.value_loss += terms.value_loss;
            stats.entropy += terms.entropy;
            stats.clip_fraction += terms.clip_fraction;
            stats.approx_kl += terms.approx_kl;
            stats.minibatches += 1;
        }
    }
    let n = stats.minibatches as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.clip_fraction /= n;
    stats.approx_kl /= n;
    Ok(stats)
}
