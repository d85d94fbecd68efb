use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Hedger;
use crate::env::{EnvConfig, HedgingEnv};
use crate::error::Result;
use crate::market::simulate_path_into;
use crate::streams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_scenarios: usize,
    pub seed: u64,
    /// Discount used for the reward volatility.
    pub gamma: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_scenarios: 2000, seed: 0, gamma: 0.999 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_pnl: f64,
    /// Sample standard deviation of episode p&l.
    pub pnl_vol: f64,
    /// Square root of the discounted per-step reward volatility.
    pub reward_vol: f64,
    pub mean_cost: f64,
    /// Mean absolute gap between the held position and the portfolio delta.
    pub mean_delta_gap: f64,
    pub pnl: Vec<f64>,
    pub costs: Vec<f64>,
    pub n_scenarios: usize,
}

struct Episode {
    pnl: f64,
    cost: f64,
    rewards: Vec<f64>,
    delta_gap: f64,
    steps: usize,
}

const BLOCK: usize = 128;

/// Out-of-sample evaluation on scenarios `0..n_scenarios` of the evaluation
/// stream family of `seed`. Every hedger sees the same paths in the same order.
pub fn evaluate<H: Hedger + ?Sized>(hedger: &H, env: &EnvConfig, eval: &EvalConfig) -> Result<EvalReport> {
    env.validate()?;
    let n = eval.n_scenarios;
    let blocks: Vec<usize> = (0..n.div_ceil(BLOCK)).collect();
    let episodes: Vec<Vec<Episode>> = blocks
        .par_iter()
        .map(|&b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(n);
            let mut paths = vec![vec![0.0; env.market.n_steps() + 1]; hi - lo];
            for (k, p) in paths.iter_mut().enumerate() {
                simulate_path_into(&env.market, eval.seed, streams::EVAL_PATHS + (lo + k) as u64, p);
            }
            run_block(hedger, env, &paths)
        })
        .collect::<Result<_>>()?;
    Ok(summarize(episodes.into_iter().flatten().collect(), eval.gamma))
}

/// Evaluation on explicit price paths.
pub fn evaluate_paths<H: Hedger + ?Sized>(
    hedger: &H,
    env: &EnvConfig,
    paths: &[Vec<f64>],
    gamma: f64,
) -> Result<EvalReport> {
    env.validate()?;
    Ok(summarize(run_block(hedger, env, paths)?, gamma))
}

fn run_block<H: Hedger + ?Sized>(hedger: &H, env: &EnvConfig, paths: &[Vec<f64>]) -> Result<Vec<Episode>> {
    let mut envs = Vec::with_capacity(paths.len());
    let mut obs = Vec::with_capacity(paths.len());
    for p in paths {
        let mut e = HedgingEnv::new(env.clone())?;
        obs.push(e.reset(p)?);
        envs.push(e);
    }
    let mut out: Vec<Episode> = (0..paths.len())
        .map(|_| Episode { pnl: 0.0, cost: 0.0, rewards: Vec::new(), delta_gap: 0.0, steps: 0 })
        .collect();
    for _ in 0..env.market.n_steps() {
        let actions = hedger.hedges(&obs, env)?;
        for (i, e) in envs.iter_mut().enumerate() {
            let tr = e.step(actions[i])?;
            let ep = &mut out[i];
            ep.pnl += tr.raw_pnl;
            ep.cost += tr.cost;
            ep.rewards.push(tr.reward);
            ep.delta_gap += (tr.action - tr.obs.option_delta).abs();
            ep.steps += 1;
            obs[i] = tr.next_obs;
        }
    }
    Ok(out)
}

fn summarize(episodes: Vec<Episode>, gamma: f64) -> EvalReport {
    let n = episodes.len();
    let pnl: Vec<f64> = episodes.iter().map(|e| e.pnl).collect();
    let costs: Vec<f64> = episodes.iter().map(|e| e.cost).collect();
    let mean_pnl = super::stats::mean(&pnl);
    let pnl_vol = super::stats::sample_std(&pnl);
    let mean_cost = super::stats::mean(&costs);
    let gaps: Vec<f64> = episodes.iter().map(|e| e.delta_gap / e.steps.max(1) as f64).collect();
    let returns: Vec<f64> = episodes
        .iter()
        .map(|e| e.rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc))
        .collect();
    let j = (1.0 - gamma) * super::stats::mean(&returns);
    let dev: Vec<f64> = episodes
        .iter()
        .map(|e| e.rewards.iter().rev().fold(0.0, |acc, r| (r - j) * (r - j) + gamma * acc))
        .collect();
    let nu2 = (1.0 - gamma) * super::stats::mean(&dev);
    EvalReport {
        mean_pnl,
        pnl_vol,
        reward_vol: nu2.max(0.0).sqrt(),
        mean_cost,
        mean_delta_gap: super::stats::mean(&gaps),
        pnl,
        costs,
        n_scenarios: n,
    }
}
