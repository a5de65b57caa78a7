mod support;

use memrl::ppo::{
    compute_gae, log_softmax, normalize, policy_forward, LossCoefficients, PolicyParams,
    TrainConfig, Trainer,
};
use memrl::tracker::{ScriptedTable, ScriptedTracker};
use memrl::TrackingEnv;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const COEF: LossCoefficients = LossCoefficients {
    clip_epsilon: 0.2,
    value_coef: 0.5,
    entropy_coef: 0.01,
};

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = support::random_params(&mut rng, 6, 4, 3);
        let batch = support::random_batch(&mut rng, &params, 8);
        let err = support::max_gradient_error(&params, &batch, &COEF, 1e-5, 1e-6);
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn gradient_check_covers_clipped_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = support::random_params(&mut rng, 6, 4, 3);
    let batch = support::random_batch(&mut rng, &params, 64);
    let indices: Vec<usize> = (0..64).collect();
    let (terms, _) = memrl::ppo::loss_and_grad(&params, &batch, &indices, &COEF, false).unwrap();
    assert!(terms.clip_fraction > 0.0 && terms.clip_fraction < 1.0);
}

#[test]
fn gae_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        use rand::Rng;
        let rewards: Vec<f64> = (0..12).map(|_| rng.random()).collect();
        let values: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
        let last = rng.random_range(-1.0..1.0);
        let gamma = rng.random_range(0.8..=1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let (adv, ret) = compute_gae(&rewards, &values, last, gamma, lambda).unwrap();
        let direct = support::gae_direct(&rewards, &values, last, gamma, lambda);
        for i in 0..12 {
            assert!((adv[i] - direct[i]).abs() < 1e-10);
            assert!((ret[i] - (direct[i] + values[i])).abs() < 1e-10);
        }
    }
}

proptest! {
    #[test]
    fn normalized_advantages_have_unit_moments(xs in prop::collection::vec(-50.0f64..50.0, 2..200)) {
        prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-6));
        let mut ys = xs.clone();
        normalize(&mut ys);
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_sums_to_one_and_entropy_is_bounded(seed in any::<u64>(), actions in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = support::random_params(&mut rng, 7, 5, actions);
        let batch = support::random_batch(&mut rng, &params, 4);
        for obs in &batch.observations {
            let (probs, _) = policy_forward(&params, obs).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let h = -probs.iter().map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>();
            prop_assert!(h >= -1e-12 && h <= (actions as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn log_softmax_is_shift_invariant(logits in prop::collection::vec(-30.0f64..30.0, 1..10), c in -100.0f64..100.0) {
        let a = log_softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
        let b = log_softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn per_sample_policy_loss_is_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = support::random_params(&mut rng, 6, 4, 3);
        let batch = support::random_batch(&mut rng, &params, 1);
        let coef = LossCoefficients { entropy_coef: 0.0, value_coef: 1e-12, ..COEF };
        let (terms, _) = memrl::ppo::loss_and_grad(&params, &batch, &[0], &coef, false).unwrap();
        let (probs, _) = policy_forward(&params, &batch.observations[0]).unwrap();
        let ratio = (probs[batch.actions[0]].ln() - batch.old_log_probs[0]).exp();
        let bound = -ratio.max(1.0 + coef.clip_epsilon) * batch.advantages[0].abs();
        prop_assert!(terms.policy_loss >= bound - 1e-12);
    }
}

/// T=4, N=2: keeping frame 1 at t=2 is worth 1.0 at t=3, replacing it 0.2.
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

/// Mean of each full window of `width` consecutive values.
fn smoothed(xs: &[f64], width: usize) -> Vec<f64> {
    xs.windows(width)
        .map(|w| w.iter().sum::<f64>() / width as f64)
        .collect()
}

#[test]
fn learning_is_monotone_after_smoothing() {
    let mut monotone = 0;
    for seed in 0..10 {
        let config = TrainConfig {
            iterations: 40,
            samples_per_iteration: 256,
            minibatch_size: 64,
            hidden: 64,
            capacity: 2,
            seed,
            ..TrainConfig::default()
        };
        let mut env = pivotal_env();
        let mut trainer = Trainer::new(config, 4).unwrap();
        trainer.train(&mut env, |_| {}).unwrap();
        let returns: Vec<f64> = trainer.history.iter().map(|s| s.mean_return).collect();
        let curve = smoothed(&returns, 10);
        if curve.windows(2).all(|w| w[1] >= w[0] - 1e-12) {
            monotone += 1;
        }
    }
    assert!(
        monotone >= 9,
        "only {monotone}/10 seeds had a non-decreasing smoothed curve"
    );
}

#[test]
fn zero_params_give_uniform_policy() {
    let params = PolicyParams::zeros(5, 3, 4);
    let (probs, value) = policy_forward(&params, &[1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    assert!(probs.iter().all(|p| (p - 0.25).abs() < 1e-15));
    assert_eq!(value, 0.0);
}
