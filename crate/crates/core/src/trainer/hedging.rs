//! The hedging environment as a training task.

use super::{EnvFactory, EnvStep, Environment};
use crate::env::{write_features, EnvConfig, HedgingEnv};
use crate::error::Result;
use crate::market::simulate_path_into;
use crate::streams;

/// Training scenarios are GBM paths on streams `scenario % pool` of `seed`.
/// The policy outputs a hedge ratio per unit of total notional.
#[derive(Debug, Clone)]
pub struct HedgingTask {
    pub env: EnvConfig,
    pub seed: u64,
    pub pool: u64,
}

impl HedgingTask {
    pub fn new(env: EnvConfig, seed: u64, pool: u64) -> Result<Self> {
        env.validate()?;
        Ok(Self { env, seed, pool: pool.max(1) })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingHedgeEnv {
    env: HedgingEnv,
    seed: u64,
    pool: u64,
    path: Vec<f64>,
}

impl TrainingHedgeEnv {
    pub fn inner(&self) -> &HedgingEnv {
        &self.env
    }
}

impl Environment for TrainingHedgeEnv {
    fn reset(&mut self, scenario: u64, features: &mut Vec<f64>) -> Result<()> {
        let cfg = self.env.config().market;
        simulate_path_into(&cfg, self.seed, streams::TRAIN_PATHS + scenario % self.pool, &mut self.path);
        let obs = self.env.reset(&self.path)?;
        write_features(&obs, self.env.config(), features);
        Ok(())
    }

    fn step(&mut self, action: f64, features: &mut Vec<f64>) -> Result<EnvStep> {
        let tr = self.env.step(action * self.env.total_notional())?;
        if !tr.done {
            write_features(&tr.next_obs, self.env.config(), features);
        }
        Ok(EnvStep { reward: tr.reward, raw_pnl: tr.raw_pnl, cost: tr.cost, done: tr.done })
    }
}

impl EnvFactory for HedgingTask {
    type Env = TrainingHedgeEnv;

    fn make(&self) -> Result<TrainingHedgeEnv> {
        let env = HedgingEnv::new(self.env.clone())?;
        let len = env.n_steps() + 1;
        Ok(TrainingHedgeEnv { env, seed: self.seed, pool: self.pool, path: vec![0.0; len] })
    }

    fn horizon(&self) -> usize {
        self.env.market.n_steps()
    }

    fn n_features(&self) -> usize {
        self.env.n_features()
    }
}
