//! The hedging MDP.
//!
//! The agent holds a long call portfolio and chooses, at every rebalancing
//! time, the number of underlying units `a_t` it is short against it. The
//! per-step p&l follows the accounting formulation by default:
//!
//! ```text
//! rho_t = (C_{t+1} - C_t) - a_t (S_{t+1} - S_t) - c(a_t - a_{t-1})
//! ```
//!
//! with `c(n) = tick * (|n| + 0.01 n^2)`. The cash-flow formulation replaces
//! the mark-to-model term by the premium paid at `t = 0` and the payoff at
//! expiry. The option expires on the last step of the path and is valued at
//! intrinsic there.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketSpec;
use crate::pricing::{portfolio_value_delta, OptionSpec, Portfolio};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub tick_size: f64,
    pub quad_coeff: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { tick_size: 0.05, quad_coeff: 0.01 }
    }
}

impl CostModel {
    pub fn with_tick(tick_size: f64) -> Self {
        Self { tick_size, ..Default::default() }
    }
}

/// Cost of changing the hedge by `n` units.
pub fn transaction_cost(n: f64, cost: &CostModel) -> f64 {
    cost.tick_size * (n.abs() + cost.quad_coeff * n * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    #[default]
    Accounting,
    CashFlow,
}

const DEFAULT_EXP_CAP: f64 = 1e6;

fn default_exp_cap() -> f64 {
    DEFAULT_EXP_CAP
}

/// Map from per-step p&l to reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shaping {
    #[default]
    Identity,
    NegAbs,
    NegPart,
    Quadratic { lambda: f64 },
    Exponential {
        lambda: f64,
        #[serde(default = "default_exp_cap")]
        cap: f64,
    },
}

static EXP_OVERFLOW_WARNED: AtomicBool = AtomicBool::new(false);

pub fn apply_shaping(rho: f64, shaping: &Shaping) -> f64 {
    match *shaping {
        Shaping::Identity => rho,
        Shaping::NegAbs => -rho.abs(),
        Shaping::NegPart => rho.min(0.0),
        Shaping::Quadratic { lambda } => rho - lambda * rho * rho,
        Shaping::Exponential { lambda, cap } => {
            let r = (-lambda * rho).exp();
            if r > cap || r.is_nan() {
                if !EXP_OVERFLOW_WARNED.swap(true, Ordering::Relaxed) {
                    log::warn!("exponential reward exp({}) saturated at cap {cap}", -lambda * rho);
                }
                cap
            } else {
                r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub market: MarketSpec,
    pub portfolio: Portfolio,
    pub cost: CostModel,
    pub formulation: Formulation,
    pub shaping: Shaping,
    /// `[lo, hi]` hedge bounds in underlying units; `[0, total notional]` when absent.
    pub action_bounds: Option<[f64; 2]>,
    /// Volatility used by the pricer; the market volatility when absent.
    pub pricing_vol: Option<f64>,
    /// Append normalized time to maturity to accounting-mode features.
    pub include_ttm: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let market = MarketSpec::default();
        Self {
            portfolio: Portfolio::single(OptionSpec::atm(market.s0, market.n_days)),
            market,
            cost: CostModel::default(),
            formulation: Formulation::Accounting,
            shaping: Shaping::Identity,
            action_bounds: None,
            pricing_vol: None,
            include_ttm: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.portfolio.validate()?;
        let mut problems = Vec::new();
        if self.portfolio.maturity_days() != self.market.n_days {
            problems.push(format!(
                "portfolio.maturity_days ({}) must equal market.n_days ({}) so the option expires on the last step",
                self.portfolio.maturity_days(),
                self.market.n_days
            ));
        }
        if !(self.cost.tick_size >= 0.0 && self.cost.tick_size.is_finite()) {
            problems.push("cost.tick_size must be finite and >= 0".into());
        }
        if !(self.cost.quad_coeff >= 0.0 && self.cost.quad_coeff.is_finite()) {
            problems.push("cost.quad_coeff must be finite and >= 0".into());
        }
        let [lo, hi] = self.bounds();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            problems.push(format!("action_bounds must satisfy lo < hi, got [{lo}, {hi}]"));
        }
        match self.shaping {
            Shaping::Quadratic { lambda } if !lambda.is_finite() => {
                problems.push("shaping.lambda must be finite".into())
            }
            Shaping::Exponential { lambda, cap } if !(lambda.is_finite() && cap.is_finite()) => {
                problems.push("shaping.lambda and shaping.cap must be finite".into())
            }
            _ => {}
        }
        if let Some(v) = self.pricing_vol {
            if !(v > 0.0 && v.is_finite()) {
                problems.push("pricing_vol must be positive".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn bounds(&self) -> [f64; 2] {
        self.action_bounds
            .unwrap_or([0.0, self.portfolio.total_notional()])
    }

    pub fn pricing_sigma(&self) -> f64 {
        self.pricing_vol.unwrap_or(self.market.sigma)
    }

    pub fn n_features(&self) -> usize {
        match self.formulation {
            Formulation::Accounting => 4 + usize::from(self.include_ttm),
            Formulation::CashFlow => 3,
        }
    }
}

/// Full market state at one rebalancing time. The formulation decides which
/// of these fields the agent sees (see [`observation_vector`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub step: usize,
    pub underlying: f64,
    pub option_value: f64,
    pub option_delta: f64,
    pub ttm: f64,
    pub prev_action: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    /// Hedge actually held, after clipping.
    pub action: f64,
    pub raw_pnl: f64,
    pub cost: f64,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

/// Normalized features: `S/s0`, `C/(s0 N)`, `delta/N`, `a_{t-1}/N` in
/// accounting mode (optionally `ttm/T`), and `S/s0`, `ttm/T`, `a_{t-1}/N` in
/// cash-flow mode, where `N` is the total notional.
pub fn observation_vector(obs: &Observation, cfg: &EnvConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.n_features());
    write_features(obs, cfg, &mut out);
    out
}

pub(crate) fn write_features(obs: &Observation, cfg: &EnvConfig, out: &mut Vec<f64>) {
    let s0 = cfg.market.s0;
    let notional = cfg.portfolio.total_notional();
    let maturity = cfg.portfolio.maturity_days() as f64 / cfg.market.day_count;
    match cfg.formulation {
        Formulation::Accounting => {
            out.push(obs.underlying / s0);
            out.push(obs.option_value / (s0 * notional));
            out.push(obs.option_delta / notional);
            out.push(obs.prev_action / notional);
            if cfg.include_ttm {
                out.push(obs.ttm / maturity);
            }
        }
        Formulation::CashFlow => {
            out.push(obs.underlying / s0);
            out.push(obs.ttm / maturity);
            out.push(obs.prev_action / notional);
        }
    }
}

/// One hedging episode over a single price path.
#[derive(Debug, Clone)]
pub struct HedgingEnv {
    cfg: EnvConfig,
    path: Vec<f64>,
    obs: Option<Observation>,
    done: bool,
    maturity: f64,
    premium: f64,
}

impl HedgingEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let maturity = cfg.portfolio.maturity_days() as f64 / cfg.market.day_count;
        Ok(Self { cfg, path: Vec::new(), obs: None, done: true, maturity, premium: 0.0 })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn n_steps(&self) -> usize {
        self.cfg.market.n_steps()
    }

    pub fn total_notional(&self) -> f64 {
        self.cfg.portfolio.total_notional()
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.obs.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Premium of the portfolio at the start of the current episode.
    pub fn premium(&self) -> f64 {
        self.premium
    }

    fn ttm_at(&self, step: usize) -> f64 {
        let n = self.n_steps();
        self.maturity * (n - step) as f64 / n as f64
    }

    fn mark(&self, step: usize) -> Result<(f64, f64)> {
        let s = self.path[step];
        if step == self.n_steps() {
            let p = &self.cfg.portfolio;
            let delta = p
                .options
                .iter()
                .map(|o| {
                    let ind = if s > o.strike { 1.0 } else if s < o.strike { 0.0 } else { 0.5 };
                    o.notional * ind
                })
                .sum();
            return Ok((p.payoff(s), delta));
        }
        portfolio_value_delta(
            &self.cfg.portfolio,
            s,
            self.cfg.pricing_sigma(),
            self.ttm_at(step),
            self.cfg.market.mu,
        )
    }

    pub fn reset(&mut self, path: &[f64]) -> Result<Observation> {
        let expected = self.n_steps() + 1;
        if path.len() != expected {
            return Err(Error::Config(format!(
                "path has {} prices, environment expects {expected}",
                path.len()
            )));
        }
        self.path.clear();
        self.path.extend_from_slice(path);
        let (value, delta) = self.mark(0)?;
        let obs = Observation {
            step: 0,
            underlying: path[0],
            option_value: value,
            option_delta: delta,
            ttm: self.maturity,
            prev_action: 0.0,
        };
        self.premium = value;
        self.obs = Some(obs);
        self.done = false;
        Ok(obs)
    }

    /// Advances one rebalancing period holding `action` units of hedge.
    pub fn step(&mut self, action: f64) -> Result<Transition> {
        if self.done {
            return Err(Error::State("step called on a finished episode".into()));
        }
        if !action.is_finite() {
            return Err(Error::Numeric(format!("non-finite action {action}")));
        }
        let obs = self.obs.expect("live episode has an observation");
        let [lo, hi] = self.cfg.bounds();
        let a = action.clamp(lo, hi);
        let t = obs.step;
        let n = self.n_steps();
        let (s0, s1) = (self.path[t], self.path[t + 1]);
        let cost = transaction_cost(a - obs.prev_action, &self.cfg.cost);
        let (value, delta) = self.mark(t + 1)?;
        let done = t + 1 == n;
        let hedge = a * (s1 - s0);
        let raw_pnl = match self.cfg.formulation {
            Formulation::Accounting => (value - obs.option_value) - hedge - cost,
            Formulation::CashFlow => {
                let mut cash = 0.0;
                if t == 0 {
                    cash -= self.premium;
                }
                if done {
                    cash += self.cfg.portfolio.payoff(s1);
                }
                cash - hedge - cost
            }
        };
        let next_obs = Observation {
            step: t + 1,
            underlying: s1,
            option_value: value,
            option_delta: delta,
            ttm: if done { 0.0 } else { self.ttm_at(t + 1) },
            prev_action: a,
        };
        self.obs = Some(next_obs);
        self.done = done;
        Ok(Transition {
            obs,
            action: a,
            raw_pnl,
            cost,
            reward: apply_shaping(raw_pnl, &self.cfg.shaping),
            next_obs,
            done,
        })
    }
}
