//! Black & Scholes call valuation.
//!
//! The forward factor on the strike is `exp(mu * ttm)` with the same `mu`
//! that drives the GBM, and `d`/`e` carry `mu + sigma^2/2`. With `mu = 0`
//! (the only case used in experiments) this is the textbook zero-rate
//! formula.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard normal CDF, accurate to ~1e-15 absolute.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// A long European call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionSpec {
    pub strike: f64,
    pub maturity_days: u32,
    #[serde(default = "unit")]
    pub notional: f64,
}

fn unit() -> f64 {
    1.0
}

impl OptionSpec {
    pub fn atm(strike: f64, maturity_days: u32) -> Self {
        Self { strike, maturity_days, notional: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::Parameter(format!("strike must be positive, got {}", self.strike)));
        }
        if self.maturity_days == 0 {
            return Err(Error::Parameter("maturity_days must be >= 1".into()));
        }
        if !(self.notional > 0.0 && self.notional.is_finite()) {
            return Err(Error::Parameter(format!(
                "notional must be positive (long calls only), got {}",
                self.notional
            )));
        }
        Ok(())
    }

    pub fn payoff(&self, s: f64) -> f64 {
        self.notional * (s - self.strike).max(0.0)
    }
}

/// Calls on one underlying that share a maturity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Portfolio {
    pub options: Vec<OptionSpec>,
}

impl Portfolio {
    pub fn single(option: OptionSpec) -> Self {
        Self { options: vec![option] }
    }

    pub fn strikes(strikes: &[f64], maturity_days: u32) -> Self {
        Self {
            options: strikes.iter().map(|&k| OptionSpec::atm(k, maturity_days)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .options
            .first()
            .ok_or_else(|| Error::Parameter("portfolio must hold at least one option".into()))?;
        for o in &self.options {
            o.validate()?;
            if o.maturity_days != first.maturity_days {
                return Err(Error::Parameter(
                    "all options in a portfolio must share one maturity".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn maturity_days(&self) -> u32 {
        self.options[0].maturity_days
    }

    pub fn total_notional(&self) -> f64 {
        self.options.iter().map(|o| o.notional).sum()
    }

    pub fn payoff(&self, s: f64) -> f64 {
        self.options.iter().map(|o| o.payoff(s)).sum()
    }
}

fn check_inputs(s: f64, k: f64, sigma: f64, ttm: f64, mu: f64) -> Result<()> {
    if [s, k, sigma, ttm, mu].iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite pricing input".into()));
    }
    if ttm < 0.0 {
        return Err(Error::Domain(format!("time to maturity must be >= 0, got {ttm}")));
    }
    if s <= 0.0 || k <= 0.0 || sigma < 0.0 {
        return Err(Error::Domain(format!("require s > 0, k > 0, sigma >= 0 (s={s}, k={k}, sigma={sigma})")));
    }
    Ok(())
}

/// `(d, e)` for positive total volatility `sigma * sqrt(ttm)`.
fn d_e(s: f64, k: f64, sigma: f64, ttm: f64, mu: f64) -> (f64, f64) {
    let vol = sigma * ttm.sqrt();
    let d = ((s / k).ln() + (mu + 0.5 * sigma * sigma) * ttm) / vol;
    (d, d - vol)
}

/// Call price and delta in one evaluation.
///
/// When `sigma * sqrt(ttm) == 0` the option is worth its forward intrinsic
/// value and delta is 0 / 1, with 0.5 exactly at the money.
pub fn bs_call(s: f64, k: f64, sigma: f64, ttm: f64, mu: f64) -> Result<(f64, f64)> {
    check_inputs(s, k, sigma, ttm, mu)?;
    let fwd_strike = k * (mu * ttm).exp();
    if sigma * ttm.sqrt() == 0.0 {
        let delta = if s > fwd_strike {
            1.0
        } else if s < fwd_strike {
            0.0
        } else {
            0.5
        };
        return Ok(((s - fwd_strike).max(0.0), delta));
    }
    let (d, e) = d_e(s, k, sigma, ttm, mu);
    let nd = norm_cdf(d);
    let price = nd * s - norm_cdf(e) * fwd_strike;
    Ok((price.clamp((s - fwd_strike).max(0.0), s), nd))
}

pub fn bs_call_price(s: f64, k: f64, sigma: f64, ttm: f64, mu: f64) -> Result<f64> {
    bs_call(s, k, sigma, ttm, mu).map(|(p, _)| p)
}

pub fn bs_delta(s: f64, k: f64, sigma: f64, ttm: f64, mu: f64) -> Result<f64> {
    bs_call(s, k, sigma, ttm, mu).map(|(_, d)| d)
}

/// Notional-weighted value and delta of a portfolio.
pub fn portfolio_value_delta(
    p: &Portfolio,
    s: f64,
    sigma: f64,
    ttm: f64,
    mu: f64,
) -> Result<(f64, f64)> {
    let mut value = 0.0;
    let mut delta = 0.0;
    for o in &p.options {
        let (v, d) = bs_call(s, o.strike, sigma, ttm, mu)?;
        value += o.notional * v;
        delta += o.notional * d;
    }
    Ok((value, delta))
}
