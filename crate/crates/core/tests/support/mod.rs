//! Independent reference computations shared by integration tests.
#![allow(dead_code)]

use memrl::baselines::FifoPolicy;
use memrl::env::{enumerate_reachable_states, DEFAULT_STATE_BUDGET};
use memrl::policy::Scripted;
use memrl::ppo::{loss_and_grad, LossCoefficients, PolicyParams, RolloutBatch};
use memrl::tracker::{ScriptedTable, ScriptedTracker};
use memrl::{run_episode, Action, TrackingEnv};
use rand::Rng;

/// Table with uniform random qualities over every reachable state.
pub fn random_table<R: Rng>(rng: &mut R, video_length: usize, capacity: usize) -> ScriptedTable {
    let states = enumerate_reachable_states(video_length, capacity, DEFAULT_STATE_BUDGET).unwrap();
    let entries = states
        .into_iter()
        .map(|s| ((s.t, s.frames), (rng.random::<f64>(), rng.random_bool(0.1))));
    ScriptedTable::new(video_length, capacity, entries).unwrap()
}

/// Best return over every action sequence, found by replaying each one.
pub fn brute_force_best(table: &ScriptedTable, gamma: f64) -> f64 {
    let capacity = table.capacity();
    let mut env = TrackingEnv::new(
        ScriptedTracker::new("brute", table.clone()),
        capacity,
        gamma,
    )
    .unwrap();
    let decisions = run_episode(&mut env, &mut FifoPolicy)
        .unwrap()
        .decisions()
        .count();
    let total = capacity.pow(decisions as u32);
    let mut best = f64::NEG_INFINITY;
    for code in 0..total {
        let mut rest = code;
        let actions: Vec<Action> = (0..decisions)
            .map(|_| {
                let a = Action::from_index(rest % capacity, capacity).unwrap();
                rest /= capacity;
                a
            })
            .collect();
        let trace = run_episode(&mut env, &mut Scripted::new(actions)).unwrap();
        best = best.max(trace.final_return);
    }
    best
}

/// GAE written as the direct sum `Σ_k (γλ)^k δ_{t+k}`.
pub fn gae_direct(
    rewards: &[f64],
    values: &[f64],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let v = |i: usize| if i < n { values[i] } else { last_value };
    let delta: Vec<f64> = (0..n)
        .map(|i| rewards[i] + gamma * v(i + 1) - v(i))
        .collect();
    (0..n)
        .map(|t| {
            (t..n)
                .map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k])
                .sum()
        })
        .collect()
}

/// Random network with weights large enough that every term matters.
pub fn random_params<R: Rng>(
    rng: &mut R,
    inputs: usize,
    hidden: usize,
    actions: usize,
) -> PolicyParams {
    let mut params = PolicyParams::zeros(inputs, hidden, actions);
    for tensor in params.tensors_mut() {
        for w in tensor.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
    }
    params
}

/// Batch of binary observations (frame 0 and the current bit always set),
/// with old log-probs spread so that some ratios fall outside the clip range.
pub fn random_batch<R: Rng>(rng: &mut R, params: &PolicyParams, size: usize) -> RolloutBatch {
    let width = params.input_width();
    let mut batch = RolloutBatch::default();
    for _ in 0..size {
        let t = rng.random_range(1..width);
        let mut obs = vec![0.0; width];
        obs[0] = 1.0;
        obs[t] = 1.0;
        for x in obs.iter_mut().take(t).skip(1) {
            if rng.random_bool(0.4) {
                *x = 1.0;
            }
        }
        batch.observations.push(obs);
        batch.actions.push(rng.random_range(0..params.actions()));
        batch.old_log_probs.push(-rng.random_range(0.2..2.5));
        batch.advantages.push(rng.random_range(-2.0..2.0));
        batch.returns.push(rng.random_range(0.0..5.0));
    }
    batch
}

/// Largest elementwise relative error between the analytic gradient and a
/// central finite difference with step `h`, over every parameter.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// parameters whose true gradient is zero from dividing rounding noise by zero.
pub fn max_gradient_error(
    params: &PolicyParams,
    batch: &RolloutBatch,
    coef: &LossCoefficients,
    h: f64,
    floor: f64,
) -> f64 {
    let indices: Vec<usize> = (0..batch.len()).collect();
    let (_, grad) = loss_and_grad(params, batch, &indices, coef, true).unwrap();
    let grad = grad.unwrap();
    let analytic: Vec<Vec<f64>> = grad
        .tensors()
        .into_iter()
        .map(|(_, t)| t.to_vec())
        .collect();
    let loss = |p: &PolicyParams| {
        loss_and_grad(p, batch, &indices, coef, false)
            .unwrap()
            .0
            .total
    };

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (k, tensor) in analytic.iter().enumerate() {
        for (j, &a) in tensor.iter().enumerate() {
            let orig = probe.tensors_mut()[k][j];
            probe.tensors_mut()[k][j] = orig + h;
            let up = loss(&probe);
            probe.tensors_mut()[k][j] = orig - h;
            let down = loss(&probe);
            probe.tensors_mut()[k][j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

pub struct MetricFixture {
    pub name: &'static str,
    pub results: Vec<memrl::metrics::FrameResult>,
    pub quality: f64,
    pub accuracy: f64,
    pub robustness: f64,
}

/// Hand-built frame results with hand-computed expectations.
pub fn metric_fixtures() -> Vec<MetricFixture> {
    use memrl::metrics::FrameResult;
    let hit = |iou: f64| FrameResult {
        iou,
        predicted_empty: false,
        gt_empty: false,
    };
    let miss = FrameResult {
        iou: 0.0,
        predicted_empty: true,
        gt_empty: false,
    };
    let empty_empty = FrameResult {
        iou: 0.0,
        predicted_empty: true,
        gt_empty: true,
    };
    let false_positive = FrameResult {
        iou: 0.0,
        predicted_empty: false,
        gt_empty: true,
    };
    let f = |name, results, quality, accuracy, robustness| MetricFixture {
        name,
        results,
        quality,
        accuracy,
        robustness,
    };
    vec![
        f("single perfect frame", vec![hit(1.0)], 1.0, 1.0, 1.0),
        f("all perfect", vec![hit(1.0); 3], 1.0, 1.0, 1.0),
        f(
            "empty-empty credited",
            vec![empty_empty, hit(0.5)],
            0.75,
            0.5,
            1.0,
        ),
        f("all miss", vec![miss; 4], 0.0, 0.0, 0.0),
        f("never visible", vec![empty_empty; 3], 1.0, 0.0, 1.0),
        f(
            "one visible miss",
            vec![hit(0.8), hit(0.6), miss, hit(0.4)],
            0.45,
            0.6,
            0.75,
        ),
        f(
            "false positive on empty frame",
            vec![hit(1.0), false_positive, empty_empty],
            2.0 / 3.0,
            1.0,
            1.0,
        ),
        f(
            "graded overlaps",
            vec![hit(0.9), hit(0.7), hit(0.5), hit(0.3), hit(0.1)],
            0.5,
            0.5,
            1.0,
        ),
        f(
            "inexact decimals",
            vec![hit(0.1), hit(0.2), hit(0.3)],
            0.2,
            0.2,
            1.0,
        ),
        f(
            "mixed empty and miss",
            vec![empty_empty, empty_empty, miss, hit(0.6)],
            0.65,
            0.6,
            0.5,
        ),
        f("zero-overlap mask", vec![hit(0.0), hit(1.0)], 0.5, 1.0, 0.5),
    ]
}
