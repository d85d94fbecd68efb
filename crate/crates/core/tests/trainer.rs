mod common;

use common::*;
use ndarray::{arr2, Array1, Array2};
use proptest::prelude::*;
use trvo_hedge::env::{CostModel, EnvConfig};
use trvo_hedge::market::MarketSpec;
use trvo_hedge::policy::{Layout, MlpParams, PolicyParams, ValueParams};
use trvo_hedge::pricing::{OptionSpec, Portfolio};
use trvo_hedge::trainer::*;

fn short_env(n_days: u32, sigma: f64, tick: f64) -> EnvConfig {
    let market = MarketSpec { n_days, sigma, ..Default::default() };
    EnvConfig {
        market,
        portfolio: Portfolio::single(OptionSpec::atm(100.0, n_days)),
        cost: CostModel::with_tick(tick),
        ..Default::default()
    }
}

/// Linear policy holding exactly the delta feature, with the smallest noise.
fn delta_policy() -> PolicyParams {
    let layout = Layout::new(vec![4, 1], true).unwrap();
    let mut flat = vec![0.0; layout.n_params()];
    flat[2] = 1.0;
    *flat.last_mut().unwrap() = -5.0;
    PolicyParams(MlpParams::from_flat(layout, flat).unwrap())
}

#[test]
fn estimate_j_examples() {
    let gamma = 0.9;
    let b = TrajectoryBatch::from_rewards(&[vec![2.0; 5]], gamma);
    assert!((estimate_j(&b, gamma) - 2.0 * (1.0 - gamma.powi(5))).abs() < 1e-12);
    let b = TrajectoryBatch::from_rewards(&[vec![0.0; 4], vec![0.0; 4]], gamma);
    assert_eq!(estimate_j(&b, gamma), 0.0);
    let b = TrajectoryBatch::from_rewards(&[vec![1.0, 2.0], vec![3.0]], gamma);
    let (g1, g2) = (1.0 + 0.9 * 2.0, 3.0);
    assert!((estimate_j(&b, gamma) - (1.0 - gamma) * (g1 + g2) / 2.0).abs() < 1e-12);
    // Long horizon: the normalized estimate approaches the constant reward.
    let b = TrajectoryBatch::from_rewards(&[vec![0.7; 20_000]], 0.999);
    assert!((estimate_j(&b, 0.999) - 0.7).abs() < 1e-8);
}

#[test]
fn transform_rewards_examples() {
    let mut b = TrajectoryBatch::from_rewards(&[vec![1.0, -0.25, 0.5]], 0.99);
    transform_rewards(&mut b, 0.0, 0.3);
    assert_eq!(b.transformed, b.rewards);
    transform_rewards(&mut b, 2.0, 0.0);
    assert_eq!(b.transformed[0], -1.0);
    let mut c = TrajectoryBatch::from_rewards(&[vec![0.4; 30_000]], 0.999);
    let j = estimate_j(&c, 0.999);
    transform_rewards(&mut c, 5.0, j);
    assert!(c.transformed.iter().all(|r| (r - 0.4).abs() < 1e-10));
}

#[test]
fn reward_volatility_of_constant_rewards_has_closed_form() {
    let (gamma, c, h) = (0.99, 0.3, 40);
    let b = TrajectoryBatch::from_rewards(&[vec![c; h]], gamma);
    let j = estimate_j(&b, gamma);
    let gh = gamma.powi(h as i32);
    let expect = c * c * gh * gh * (1.0 - gh);
    assert!((reward_volatility(&b, gamma, j) - expect).abs() < 1e-14);
}

#[test]
fn gae_with_zero_value_and_unit_lambda_is_reward_to_go() {
    let gamma = 0.9;
    let mut b = TrajectoryBatch::from_rewards(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5]], gamma);
    compute_value_targets(&mut b, gamma);
    let adv = gae(&b, &Array1::zeros(b.len()), gamma, 1.0);
    assert_eq!(adv, b.value_targets);
    let expect = [1.0 + 0.9 * 2.0 + 0.81 * 3.0, 2.0 + 0.9 * 3.0, 3.0, -1.0 + 0.45, 0.5];
    for (a, e) in adv.iter().zip(expect) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn perfect_value_function_gives_zero_advantages() {
    let gamma = 0.95;
    let mut b = TrajectoryBatch::from_rewards(&[vec![0.5, -1.0, 2.0]], gamma);
    b.features = Array2::eye(3);
    let v2 = 2.0;
    let v1 = -1.0 + gamma * v2;
    let v0 = 0.5 + gamma * v1;
    let layout = Layout::new(vec![3, 1], false).unwrap();
    let value = ValueParams(MlpParams::from_flat(layout, vec![v0, v1, v2, 0.0]).unwrap());
    let values = value.values(b.features.view()).unwrap();
    let adv = gae(&b, &values, gamma, 0.97);
    assert!(adv.iter().all(|a| a.abs() < 1e-12));
}

#[test]
fn advantages_are_normalized() {
    let mut r = rng(31);
    let eps: Vec<Vec<f64>> = (0..7).map(|_| random_batch(&mut r, 9, 1).into_raw_vec_and_offset().0).collect();
    let mut b = TrajectoryBatch::from_rewards(&eps, 0.99);
    compute_value_targets(&mut b, 0.99);
    let layout = Layout::new(vec![1, 4, 1], false).unwrap();
    let value = ValueParams(MlpParams::orthogonal(layout, 1.0, 1.0, &mut r));
    compute_advantages(&mut b, &value, 0.99, 0.97).unwrap();
    let a = b.advantages.to_vec();
    let m = mean(&a);
    let sd = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
    assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
}

#[test]
fn collect_batch_is_deterministic_and_whole_episodes() {
    let env = short_env(2, 0.0, 0.05);
    let task = HedgingTask::new(env, 9, 100).unwrap();
    let cfg = TrainConfig { batch_steps: 95, seed: 9, hidden: vec![8], ..Default::default() };
    let (policy, _) = initial_params(&cfg, task.n_features());
    let a = collect_batch(&policy, &task, &cfg, 4).unwrap();
    let b = collect_batch(&policy, &task, &cfg, 4).unwrap();
    assert_eq!(a, b);
    let horizon = task.horizon();
    assert!(a.n_episodes() >= 95usize.div_ceil(horizon));
    assert!(a.len() >= 95);
    for ep in &a.episodes {
        assert_eq!(ep.len(), horizon);
        assert!(a.dones[ep.end - 1]);
        assert!(ep.clone().take(horizon - 1).all(|t| !a.dones[t]));
    }
}

#[test]
fn delta_hedge_batch_has_zero_mean_reward_without_costs() {
    let env = short_env(10, 0.2, 0.0);
    let task = HedgingTask::new(env, 2, 10_000).unwrap();
    let cfg = TrainConfig { batch_steps: 50 * 400, seed: 2, ..Default::default() };
    let b = collect_batch(&delta_policy(), &task, &cfg, 0).unwrap();
    let r = b.rewards.to_vec();
    let se = sample_std(&r) / (r.len() as f64).sqrt();
    assert!(mean(&r).abs() <= 3.0 * se, "mean {} se {se}", mean(&r));
}

#[test]
fn zero_advantages_leave_policy_unchanged() {
    let env = short_env(2, 0.2, 0.05);
    let task = HedgingTask::new(env, 1, 100).unwrap();
    let cfg = TrainConfig { batch_steps: 100, hidden: vec![8], ..Default::default() };
    let (policy, _) = initial_params(&cfg, task.n_features());
    let b = collect_batch(&policy, &task, &cfg, 0).unwrap();
    let (next, diag) = trpo_step(&policy, &b, &cfg).unwrap();
    assert_eq!(next, policy);
    assert!(!diag.accepted);
}

#[test]
fn lambda_zero_matches_plain_trpo() {
    let env = short_env(2, 0.2, 0.05);
    let task = HedgingTask::new(env, 5, 500).unwrap();
    let cfg = TrainConfig { batch_steps: 400, iterations: 5, seed: 5, lambda_risk: 0.0, ..Default::default() };
    let a = train(&cfg, &task).unwrap();
    let b = train_trpo(&cfg, &task).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.value, b.value);
}

#[test]
fn training_is_deterministic_and_checkpoints_on_schedule() {
    let env = short_env(2, 0.2, 0.05);
    let task = HedgingTask::new(env, 8, 500).unwrap();
    let cfg = TrainConfig {
        batch_steps: 300,
        iterations: 6,
        seed: 8,
        lambda_risk: 2.0,
        checkpoint_every: 4,
        ..Default::default()
    };
    let a = train(&cfg, &task).unwrap();
    let b = train(&cfg, &task).unwrap();
    assert_eq!(a.log, b.log);
    let steps: Vec<u64> = a.checkpoints.iter().map(|c| c.header.step).collect();
    assert_eq!(steps, vec![4, 6]);
    assert_eq!(a.checkpoints[1].policy().unwrap(), a.policy);
    assert_eq!(a.checkpoints[1].header.lambda, 2.0);
}

#[test]
fn invalid_config_is_rejected() {
    let task = ToyTask::default();
    for cfg in [
        TrainConfig { gamma: 1.0, ..Default::default() },
        TrainConfig { max_kl: 0.0, ..Default::default() },
        TrainConfig { lambda_risk: -1.0, ..Default::default() },
    ] {
        assert!(matches!(train(&cfg, &task), Err(TrainFailure { error: trvo_hedge::Error::Validation(_), .. })));
    }
    assert!(TrainConfig { batch_steps: 10, ..Default::default() }.validate(50).is_err());
}

#[test]
fn toy_bandit_converges_to_its_optimum() {
    let cfg = TrainConfig { batch_steps: 1000, iterations: 200, seed: 1, ..Default::default() };
    let run = train(&cfg, &ToyTask::default()).unwrap();
    let m = run.policy.means(arr2(&[[1.0]]).view()).unwrap()[0];
    assert!((m - 1.0).abs() < 0.05, "mean {m}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reward_volatility_is_non_negative(
        eps in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 1..20), 1..6),
        gamma in 0.5f64..0.999,
    ) {
        let b = TrajectoryBatch::from_rewards(&eps, gamma);
        let j = estimate_j(&b, gamma);
        prop_assert!(reward_volatility(&b, gamma, j) >= 0.0);
        let zeros: Vec<Vec<f64>> = eps.iter().map(|e| vec![0.0; e.len()]).collect();
        let z = TrajectoryBatch::from_rewards(&zeros, gamma);
        prop_assert_eq!(reward_volatility(&z, gamma, estimate_j(&z, gamma)), 0.0);
    }

    #[test]
    fn lambda_zero_transform_is_bit_identical(
        r in proptest::collection::vec(-1e3f64..1e3, 1..50),
        j in -10.0f64..10.0,
    ) {
        let mut b = TrajectoryBatch::from_rewards(&[r], 0.99);
        transform_rewards(&mut b, 0.0, j);
        for (x, y) in b.transformed.iter().zip(b.rewards.iter()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
