use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compare, evaluate, DeltaHedge, EvalConfig, EvalReport, PolicyHedger};
use crate::env::EnvConfig;
use crate::error::Result;
use crate::policy::PolicyParams;
use crate::pricing::{OptionSpec, Portfolio};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    pub delta_pnl: f64,
    pub delta_sigma: f64,
    pub reward_vol: f64,
    pub mean_cost: f64,
    pub pct_better: f64,
    pub t_stat: f64,
}

pub fn frontier_point(lambda: f64, agent: &EvalReport, hedge: &EvalReport) -> Result<FrontierPoint> {
    let c = compare(agent, hedge)?;
    Ok(FrontierPoint {
        lambda,
        delta_pnl: c.delta_pnl,
        delta_sigma: c.delta_sigma,
        reward_vol: agent.reward_vol,
        mean_cost: agent.mean_cost,
        pct_better: c.pct_better,
        t_stat: c.t_stat,
    })
}

/// Obtains one agent per `lambda` through `agent_for`, evaluates each paired
/// against the delta hedge and returns the points sorted by `lambda`. A
/// lambda whose agent cannot be produced is skipped with a warning.
pub fn frontier<F>(lambdas: &[f64], env: &EnvConfig, eval: &EvalConfig, agent_for: F) -> Result<Vec<FrontierPoint>>
where
    F: Fn(f64) -> Result<PolicyParams> + Sync,
{
    let hedge = evaluate(&DeltaHedge, env, eval)?;
    let points: Vec<Option<FrontierPoint>> = lambdas
        .par_iter()
        .map(|&lambda| {
            let run = agent_for(lambda).and_then(|policy| {
                let report = evaluate(&PolicyHedger { policy }, env, eval)?;
                frontier_point(lambda, &report, &hedge)
            });
            match run {
                Ok(p) => Some(p),
                Err(e) => {
                    log::warn!("skipping lambda={lambda}: {e}");
                    None
                }
            }
        })
        .collect();
    let mut points: Vec<FrontierPoint> = points.into_iter().flatten().collect();
    points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(points)
}

/// Index of the point whose local frontier slope `d(delta_pnl)/d(delta_sigma)`
/// is closest to 1. Slopes come from central differences along the
/// lambda-sorted points (one-sided at the ends).
pub fn optimum_index(points: &[FrontierPoint]) -> Option<usize> {
    match points.len() {
        0 => return None,
        1 => return Some(0),
        _ => {}
    }
    let last = points.len() - 1;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..points.len() {
        let (a, b) = (&points[i.saturating_sub(1)], &points[(i + 1).min(last)]);
        let slope = (b.delta_pnl - a.delta_pnl) / (b.delta_sigma - a.delta_sigma);
        if !slope.is_finite() {
            continue;
        }
        let gap = (slope - 1.0).abs();
        if best.is_none_or(|(_, g)| gap < g) {
            best = Some((i, gap));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RobustnessScenario {
    Std,
    Itm,
    Otm,
    HighVol,
    Portfolio,
}

impl RobustnessScenario {
    pub const ALL: [Self; 5] = [Self::Std, Self::Itm, Self::Otm, Self::HighVol, Self::Portfolio];

    pub fn label(self) -> &'static str {
        match self {
            Self::Std => "std",
            Self::Itm => "itm",
            Self::Otm => "otm",
            Self::HighVol => "high_vol",
            Self::Portfolio => "portfolio",
        }
    }
}

/// Test environments derived from the training environment `base`:
/// strikes at 105% and 95% of spot (labelled ITM and OTM), a market with
/// 30% realized volatility priced at the training volatility, and a
/// five-strike unit-notional portfolio from 90% to 110% of spot.
pub fn robustness_envs(base: &EnvConfig) -> Vec<(RobustnessScenario, EnvConfig)> {
    let s0 = base.market.s0;
    let maturity = base.portfolio.maturity_days();
    let single = |k: f64| {
        let mut e = base.clone();
        e.portfolio = Portfolio::single(OptionSpec { strike: k, maturity_days: maturity, notional: 1.0 });
        e.action_bounds = None;
        e
    };
    let mut high_vol = base.clone();
    high_vol.pricing_vol = Some(base.pricing_sigma());
    high_vol.market.sigma = 0.3;
    let mut portfolio = base.clone();
    portfolio.portfolio = Portfolio::strikes(&[0.9 * s0, 0.95 * s0, s0, 1.05 * s0, 1.1 * s0], maturity);
    portfolio.action_bounds = None;
    vec![
        (RobustnessScenario::Std, base.clone()),
        (RobustnessScenario::Itm, single(1.05 * s0)),
        (RobustnessScenario::Otm, single(0.95 * s0)),
        (RobustnessScenario::HighVol, high_vol),
        (RobustnessScenario::Portfolio, portfolio),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub scenario: RobustnessScenario,
    pub lambda: f64,
    pub delta_pnl: f64,
    pub delta_sigma: f64,
}

/// Evaluates each unmodified agent on every robustness environment against the
/// delta hedge on the same paths. Rows come out by lambda, then scenario.
pub fn robustness_suite(
    agents: &[(f64, PolicyParams)],
    base: &EnvConfig,
    eval: &EvalConfig,
) -> Result<Vec<RobustnessRow>> {
    let envs = robustness_envs(base);
    let hedges: Vec<EvalReport> = envs
        .iter()
        .map(|(_, env)| evaluate(&DeltaHedge, env, eval))
        .collect::<Result<_>>()?;
    let mut sorted: Vec<&(f64, PolicyParams)> = agents.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rows = Vec::with_capacity(sorted.len() * envs.len());
    for (lambda, policy) in sorted {
        let hedger = PolicyHedger { policy: policy.clone() };
        for ((scenario, env), hedge) in envs.iter().zip(&hedges) {
            let report = evaluate(&hedger, env, eval)?;
            let c = compare(&report, hedge)?;
            rows.push(RobustnessRow {
                scenario: *scenario,
                lambda: *lambda,
                delta_pnl: c.delta_pnl,
                delta_sigma: c.delta_sigma,
            });
        }
    }
    Ok(rows)
}

/// One line per lambda with a (delta_pnl, delta_sigma) column pair per scenario.
pub fn write_robustness_csv<W: std::io::Write>(rows: &[RobustnessRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["lambda".to_string()];
    for s in RobustnessScenario::ALL {
        header.push(format!("{}_delta_pnl", s.label()));
        header.push(format!("{}_delta_sigma", s.label()));
    }
    w.write_record(&header)?;
    let mut lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    for lambda in lambdas {
        let mut rec = vec![lambda.to_string()];
        for s in RobustnessScenario::ALL {
            match rows.iter().find(|r| r.lambda == lambda && r.scenario == s) {
                Some(r) => {
                    rec.push(r.delta_pnl.to_string());
                    rec.push(r.delta_sigma.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
