//! Rollout collection and the per-batch reward statistics.

use std::ops::Range;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};

use super::{EnvFactory, Environment, TrainConfig};
use crate::error::{Error, Result};
use crate::market::path_rng;
use crate::policy::{gaussian_log_density, PolicyParams, ValueParams};
use crate::streams;

/// Transitions of whole episodes, stored episode after episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub features: Array2<f64>,
    pub actions: Array1<f64>,
    /// Environment rewards (shaped per-step p&l).
    pub rewards: Array1<f64>,
    /// Rewards after the volatility penalty; equal to `rewards` until transformed.
    pub transformed: Array1<f64>,
    pub raw_pnl: Array1<f64>,
    pub costs: Array1<f64>,
    pub old_log_probs: Array1<f64>,
    pub advantages: Array1<f64>,
    /// Discounted reward-to-go of the transformed rewards.
    pub value_targets: Array1<f64>,
    /// Discounted return `G` of each episode under the environment rewards.
    pub returns: Vec<f64>,
    pub episodes: Vec<Range<usize>>,
    pub dones: Vec<bool>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn mean_episode_pnl(&self) -> f64 {
        self.episode_mean(&self.raw_pnl)
    }

    pub fn mean_episode_cost(&self) -> f64 {
        self.episode_mean(&self.costs)
    }

    fn episode_mean(&self, x: &Array1<f64>) -> f64 {
        let total: f64 = self
            .episodes
            .iter()
            .map(|r| x.slice(ndarray::s![r.clone()]).sum())
            .sum();
        total / self.n_episodes() as f64
    }

    /// Builds a batch from per-episode reward sequences; features are a single
    /// zero column. Used to exercise the reward statistics directly.
    pub fn from_rewards(episodes: &[Vec<f64>], gamma: f64) -> Self {
        let rewards: Vec<f64> = episodes.iter().flatten().copied().collect();
        let n = rewards.len();
        let mut ranges = Vec::new();
        let mut dones = Vec::with_capacity(n);
        let mut start = 0;
        for ep in episodes {
            ranges.push(start..start + ep.len());
            dones.extend((0..ep.len()).map(|t| t + 1 == ep.len()));
            start += ep.len();
        }
        let rewards = Array1::from(rewards);
        let mut batch = Self {
            features: Array2::zeros((n, 1)),
            actions: Array1::zeros(n),
            transformed: rewards.clone(),
            raw_pnl: rewards.clone(),
            rewards,
            costs: Array1::zeros(n),
            old_log_probs: Array1::zeros(n),
            advantages: Array1::zeros(n),
            value_targets: Array1::zeros(n),
            returns: Vec::new(),
            episodes: ranges,
            dones,
        };
        batch.returns = batch.discounted_returns(gamma);
        batch
    }

    fn discounted_returns(&self, gamma: f64) -> Vec<f64> {
        self.episodes
            .iter()
            .map(|r| {
                let mut g = 0.0;
                let mut w = 1.0;
                for t in r.clone() {
                    g += w * self.rewards[t];
                    w *= gamma;
                }
                g
            })
            .collect()
    }
}

#[derive(Default)]
struct EpisodeBuffer {
    features: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    raw_pnl: Vec<f64>,
    costs: Vec<f64>,
    log_probs: Vec<f64>,
    dones: Vec<bool>,
}

/// Runs `ceil(batch_steps / horizon)` whole episodes of the sampling policy.
///
/// Episode `e` of iteration `iteration` is global episode
/// `g = iteration * n_episodes + e`; it plays scenario `g` of the factory
/// and draws exploration noise from its own stream, so the batch depends only
/// on `(seed, iteration, policy)`.
pub fn collect_batch<F: EnvFactory>(
    policy: &PolicyParams,
    factory: &F,
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<TrajectoryBatch> {
    if policy.flat().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("policy parameters are not finite".into()));
    }
    let horizon = factory.horizon();
    let n_features = factory.n_features();
    if n_features != policy.layout().n_inputs() {
        return Err(Error::Shape { expected: policy.layout().n_inputs(), got: n_features });
    }
    let n_eps = cfg.episodes_per_batch(horizon);
    let std = policy.std();
    let log_std = policy.log_std();

    let mut envs = Vec::with_capacity(n_eps);
    let mut noise = Vec::with_capacity(n_eps);
    let mut current = Array2::<f64>::zeros((n_eps, n_features));
    let mut scratch = Vec::with_capacity(n_features);
    for e in 0..n_eps {
        let global = iteration * n_eps as u64 + e as u64;
        let mut env = factory.make()?;
        scratch.clear();
        env.reset(global, &mut scratch)?;
        current.row_mut(e).assign(&ndarray::ArrayView1::from(&scratch[..]));
        envs.push(env);
        noise.push(path_rng(cfg.seed, streams::NOISE + global));
    }
    let mut buffers: Vec<EpisodeBuffer> = (0..n_eps).map(|_| EpisodeBuffer::default()).collect();
    let mut active: Vec<usize> = (0..n_eps).collect();
    while !active.is_empty() {
        let rows = current.select(ndarray::Axis(0), &active);
        let means = policy.means(rows.view())?;
        let mut still = Vec::with_capacity(active.len());
        for (k, &e) in active.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut noise[e]);
            let action = means[k] + std * z;
            let buf = &mut buffers[e];
            buf.features.extend(rows.row(k).iter());
            buf.actions.push(action);
            buf.log_probs.push(gaussian_log_density(action, means[k], log_std));
            scratch.clear();
            let step = envs[e].step(action, &mut scratch)?;
            buf.rewards.push(step.reward);
            buf.raw_pnl.push(step.raw_pnl);
            buf.costs.push(step.cost);
            buf.dones.push(step.done);
            if step.done {
                continue;
            }
            if buf.actions.len() >= horizon {
                return Err(Error::State(format!("episode exceeded its horizon of {horizon} steps")));
            }
            current.row_mut(e).assign(&ndarray::ArrayView1::from(&scratch[..]));
            still.push(e);
        }
        active = still;
    }

    let total: usize = buffers.iter().map(|b| b.actions.len()).sum();
    let mut features = Vec::with_capacity(total * n_features);
    let cat = |f: fn(&EpisodeBuffer) -> &Vec<f64>| -> Array1<f64> {
        Array1::from(buffers.iter().flat_map(|b| f(b).iter().copied()).collect::<Vec<_>>())
    };
    let actions = cat(|b| &b.actions);
    let rewards = cat(|b| &b.rewards);
    let raw_pnl = cat(|b| &b.raw_pnl);
    let costs = cat(|b| &b.costs);
    let old_log_probs = cat(|b| &b.log_probs);
    let mut episodes = Vec::with_capacity(n_eps);
    let mut dones = Vec::with_capacity(total);
    let mut start = 0;
    for b in &buffers {
        features.extend_from_slice(&b.features);
        dones.extend_from_slice(&b.dones);
        episodes.push(start..start + b.actions.len());
        start += b.actions.len();
    }
    let features = Array2::from_shape_vec((total, n_features), features)
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let mut batch = TrajectoryBatch {
        features,
        actions,
        transformed: rewards.clone(),
        rewards,
        raw_pnl,
        costs,
        old_log_probs,
        advantages: Array1::zeros(total),
        value_targets: Array1::zeros(total),
        returns: Vec::new(),
        episodes,
        dones,
    };
    batch.returns = batch.discounted_returns(cfg.gamma);
    Ok(batch)
}

/// Normalized expected reward `(1 - gamma) * mean_episode G`.
pub fn estimate_j(batch: &TrajectoryBatch, gamma: f64) -> f64 {
    let n = batch.returns.len() as f64;
    (1.0 - gamma) * batch.returns.iter().sum::<f64>() / n
}

/// Reward volatility `(1 - gamma) * mean_episode sum_t gamma^t (r_t - j)^2`.
pub fn reward_volatility(batch: &TrajectoryBatch, gamma: f64, j: f64) -> f64 {
    let total: f64 = batch
        .episodes
        .iter()
        .map(|r| {
            let mut w = 1.0;
            let mut acc = 0.0;
            for t in r.clone() {
                let d = batch.rewards[t] - j;
                acc += w * d * d;
                w *= gamma;
            }
            acc
        })
        .sum();
    (1.0 - gamma) * total / batch.n_episodes() as f64
}

/// `r - lambda (r - j)^2`, leaving rewards untouched when `lambda == 0`.
pub fn transform_rewards(batch: &mut TrajectoryBatch, lambda_risk: f64, j: f64) {
    if lambda_risk == 0.0 {
        batch.transformed.assign(&batch.rewards);
        return;
    }
    batch.transformed = batch.rewards.mapv(|r| {
        let d = r - j;
        r - lambda_risk * d * d
    });
}

/// Fills `value_targets` with discounted reward-to-go of the transformed rewards.
pub fn compute_value_targets(batch: &mut TrajectoryBatch, gamma: f64) {
    for r in batch.episodes.clone() {
        let mut acc = 0.0;
        for t in r.rev() {
            acc = batch.transformed[t] + gamma * acc;
            batch.value_targets[t] = acc;
        }
    }
}

/// Raw GAE advantages (before normalization) given baseline values.
pub fn gae(batch: &TrajectoryBatch, values: &Array1<f64>, gamma: f64, gae_lambda: f64) -> Array1<f64> {
    let mut adv = Array1::zeros(batch.len());
    for r in &batch.episodes {
        let mut acc = 0.0;
        for t in r.clone().rev() {
            let next = if batch.dones[t] || t + 1 == r.end { 0.0 } else { values[t + 1] };
            let delta = batch.transformed[t] + gamma * next - values[t];
            acc = delta + gamma * gae_lambda * acc;
            adv[t] = acc;
        }
    }
    adv
}

/// Shifts and scales to mean 0, standard deviation 1 (population).
pub fn normalize(x: &mut Array1<f64>) {
    let n = x.len() as f64;
    if x.is_empty() {
        return;
    }
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-12 * (1.0 + mean.abs()) {
        x.mapv_inplace(|v| (v - mean) / std);
    } else {
        x.fill(0.0);
    }
}

pub fn compute_advantages(
    batch: &mut TrajectoryBatch,
    value: &ValueParams,
    gamma: f64,
    gae_lambda: f64,
) -> Result<()> {
    let values = value.values(batch.features.view())?;
    let mut adv = gae(batch, &values, gamma, gae_lambda);
    normalize(&mut adv);
    batch.advantages = adv;
    Ok(())
}
