//! Baseline hedgers, out-of-sample evaluation and the derived statistics.

mod report;
mod stats;
mod suite;

pub use report::{evaluate, evaluate_paths, EvalConfig, EvalReport};
pub use stats::{compare, pnl_histogram, quantile, Comparison, Histogram, HistogramBin, T_STAT_CAP};
pub use suite::{
    frontier, frontier_point, optimum_index, robustness_envs, robustness_suite, write_robustness_csv,
    FrontierPoint, RobustnessRow, RobustnessScenario,
};

use crate::env::{observation_vector, EnvConfig, Observation};
use crate::error::Result;
use crate::policy::PolicyParams;

/// A deterministic hedging rule evaluated on many environments in lockstep.
pub trait Hedger: Sync {
    /// Hedge positions in underlying units, one per observation.
    fn hedges(&self, obs: &[Observation], cfg: &EnvConfig) -> Result<Vec<f64>>;
}

/// Holds the portfolio delta.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeltaHedge;

/// Never trades.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroHedge;

/// Trained agent acting on its mean action (no exploration noise). The
/// network output is a hedge ratio per unit of total notional.
#[derive(Debug, Clone)]
pub struct PolicyHedger {
    pub policy: PolicyParams,
}

pub fn delta_hedge_policy(obs: &Observation) -> f64 {
    obs.option_delta
}

impl Hedger for DeltaHedge {
    fn hedges(&self, obs: &[Observation], _cfg: &EnvConfig) -> Result<Vec<f64>> {
        Ok(obs.iter().map(delta_hedge_policy).collect())
    }
}

impl Hedger for ZeroHedge {
    fn hedges(&self, obs: &[Observation], _cfg: &EnvConfig) -> Result<Vec<f64>> {
        Ok(vec![0.0; obs.len()])
    }
}

impl Hedger for PolicyHedger {
    fn hedges(&self, obs: &[Observation], cfg: &EnvConfig) -> Result<Vec<f64>> {
        let n = cfg.n_features();
        let mut flat = Vec::with_capacity(obs.len() * n);
        for o in obs {
            flat.extend(observation_vector(o, cfg));
        }
        let x = ndarray::Array2::from_shape_vec((obs.len(), n), flat)
            .map_err(|e| crate::Error::Numeric(e.to_string()))?;
        let scale = cfg.portfolio.total_notional();
        Ok(self.policy.means(x.view())?.iter().map(|m| m * scale).collect())
    }
}
