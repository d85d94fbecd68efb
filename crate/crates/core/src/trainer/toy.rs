//! One-step bandit with reward `-(a - target)^2`, used to check that the
//! optimizer converges to a known optimum.

use super::{EnvFactory, EnvStep, Environment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTask {
    pub target: f64,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self { target: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ToyEnv {
    target: f64,
    done: bool,
}

impl Environment for ToyEnv {
    fn reset(&mut self, _scenario: u64, features: &mut Vec<f64>) -> Result<()> {
        self.done = false;
        features.push(1.0);
        Ok(())
    }

    fn step(&mut self, action: f64, _features: &mut Vec<f64>) -> Result<EnvStep> {
        if self.done {
            return Err(Error::State("toy episode already finished".into()));
        }
        self.done = true;
        let r = -(action - self.target).powi(2);
        Ok(EnvStep { reward: r, raw_pnl: r, cost: 0.0, done: true })
    }
}

impl EnvFactory for ToyTask {
    type Env = ToyEnv;

    fn make(&self) -> Result<ToyEnv> {
        Ok(ToyEnv { target: self.target, done: true })
    }

    fn horizon(&self) -> usize {
        1
    }

    fn n_features(&self) -> usize {
        1
    }
}
