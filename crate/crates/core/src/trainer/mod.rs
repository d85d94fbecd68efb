//! Risk-averse trust-region training.
//!
//! Each iteration collects a batch with the current stochastic policy,
//! estimates the normalized expected reward `J`, replaces every reward `r` by
//! `r - lambda (r - J)^2` (the mean-volatility objective `J - lambda nu^2`),
//! refits the value baseline, computes GAE advantages and takes one
//! KL-constrained natural-gradient step.

pub mod batch;
pub mod hedging;
pub mod toy;
pub mod trpo;
pub mod value;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Checkpoint, PolicyParams, ValueParams};
use crate::streams;

pub use batch::{
    collect_batch, compute_advantages, compute_value_targets, estimate_j, gae, normalize,
    reward_volatility, transform_rewards, TrajectoryBatch,
};
pub use hedging::{HedgingTask, TrainingHedgeEnv};
pub use toy::{ToyEnv, ToyTask};
pub use trpo::{conjugate_gradient, trpo_step, CgSolution, StepDiagnostics};
pub use value::{fit_value, Adam};

/// Outcome of one environment step as seen by the trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    pub reward: f64,
    pub raw_pnl: f64,
    pub cost: f64,
    pub done: bool,
}

/// An episodic environment driven by the policy's scalar output.
pub trait Environment {
    /// Starts scenario `scenario` and writes the initial features.
    fn reset(&mut self, scenario: u64, features: &mut Vec<f64>) -> Result<()>;
    /// Applies the policy output and writes the next features (unless done).
    fn step(&mut self, action: f64, features: &mut Vec<f64>) -> Result<EnvStep>;
}

/// Builds fresh environments for rollouts.
pub trait EnvFactory: Sync {
    type Env: Environment;
    fn make(&self) -> Result<Self::Env>;
    /// Fixed episode length in steps.
    fn horizon(&self) -> usize;
    fn n_features(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub max_kl: f64,
    pub lambda_risk: f64,
    pub batch_steps: usize,
    pub iterations: usize,
    pub gae_lambda: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_coeff: f64,
    pub backtrack_steps: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub value_epochs: usize,
    pub value_minibatch: usize,
    pub value_lr: f64,
    /// Number of distinct training scenarios cycled through.
    pub scenario_pool: u64,
    /// Keep a checkpoint every this many iterations (0 keeps only the last).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            max_kl: 0.001,
            lambda_risk: 0.0,
            batch_steps: 12_000,
            iterations: 300,
            gae_lambda: 0.97,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_coeff: 0.8,
            backtrack_steps: 10,
            seed: 0,
            hidden: vec![64, 64],
            value_epochs: 5,
            value_minibatch: 1000,
            value_lr: 1e-3,
            scenario_pool: 10_000,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn episodes_per_batch(&self, horizon: usize) -> usize {
        self.batch_steps.div_ceil(horizon.max(1)).max(1)
    }

    /// Checks invariants; `horizon` is the episode length of the target environment.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            problems.push(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.max_kl > 0.0 && self.max_kl.is_finite()) {
            problems.push(format!("max_kl must be positive, got {}", self.max_kl));
        }
        if !(self.lambda_risk >= 0.0 && self.lambda_risk.is_finite()) {
            problems.push(format!("lambda_risk must be >= 0, got {}", self.lambda_risk));
        }
        if self.batch_steps < horizon {
            problems.push(format!(
                "batch_steps ({}) must cover at least one episode ({horizon} steps)",
                self.batch_steps
            ));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            problems.push(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            problems.push(format!("backtrack_coeff must lie in (0, 1), got {}", self.backtrack_coeff));
        }
        if self.cg_iters == 0 || self.backtrack_steps == 0 {
            problems.push("cg_iters and backtrack_steps must be >= 1".into());
        }
        if !(self.cg_damping >= 0.0) {
            problems.push("cg_damping must be >= 0".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            problems.push("hidden must list positive layer widths".into());
        }
        if self.scenario_pool == 0 {
            problems.push("scenario_pool must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iter: usize,
    #[serde(rename = "J_hat")]
    pub j_hat: f64,
    pub nu_hat: f64,
    pub mean_pnl: f64,
    pub mean_cost: f64,
    pub kl: f64,
    pub surrogate_improvement: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub policy: PolicyParams,
    pub value: ValueParams,
    pub log: Vec<TrainLogRow>,
    pub checkpoints: Vec<Checkpoint>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// A training run that stopped on an error; `partial` holds everything up to
/// the last completed iteration.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub partial: TrainRun,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training stopped after {} iterations: {}", self.partial.log.len(), self.error)
    }
}

impl std::error::Error for TrainFailure {}

/// How rewards are treated before advantage estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Plain expected return.
    Trpo,
    /// Mean-volatility objective with risk aversion `lambda`.
    Trvo { lambda: f64 },
}

pub fn initial_params(cfg: &TrainConfig, n_features: usize) -> (PolicyParams, ValueParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(streams::INIT);
    let policy = PolicyParams::init(&cfg.hidden, n_features, &mut rng);
    let value = ValueParams::init(&cfg.hidden, n_features, &mut rng);
    (policy, value)
}

/// Mean-volatility training with `cfg.lambda_risk`.
pub fn train<F: EnvFactory>(cfg: &TrainConfig, factory: &F) -> std::result::Result<TrainRun, TrainFailure> {
    train_objective(cfg, factory, Objective::Trvo { lambda: cfg.lambda_risk }, |_| {})
}

/// Risk-neutral training that skips the reward transformation entirely.
pub fn train_trpo<F: EnvFactory>(cfg: &TrainConfig, factory: &F) -> std::result::Result<TrainRun, TrainFailure> {
    train_objective(cfg, factory, Objective::Trpo, |_| {})
}

/// The training loop; `on_iter` sees every log row as it is produced.
pub fn train_objective<F, H>(
    cfg: &TrainConfig,
    factory: &F,
    objective: Objective,
    mut on_iter: H,
) -> std::result::Result<TrainRun, TrainFailure>
where
    F: EnvFactory,
    H: FnMut(&TrainLogRow),
{
    let (policy, value) = initial_params(cfg, factory.n_features());
    let lambda = match objective {
        Objective::Trpo => 0.0,
        Objective::Trvo { lambda } => lambda,
    };
    let mut run = TrainRun {
        checkpoints: Vec::new(),
        log: Vec::new(),
        diagnostics: Vec::new(),
        policy,
        value,
    };
    if let Err(error) = cfg.validate(factory.horizon()) {
        return Err(TrainFailure { error, partial: run });
    }
    let mut adam = Adam::new(run.value.0.flat.len(), cfg.value_lr);
    for iter in 0..cfg.iterations {
        match train_iteration(cfg, factory, objective, &run.policy, &mut run.value, &mut adam, iter) {
            Ok((next, row, diag)) => {
                run.policy = next;
                on_iter(&row);
                run.log.push(row);
                run.diagnostics.push(diag);
                let step = iter + 1;
                let due = cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0;
                if due || step == cfg.iterations {
                    run.checkpoints.push(Checkpoint::new(&run.policy, &run.value, step as u64, lambda, cfg.seed));
                }
            }
            Err(error) => {
                if run.checkpoints.last().map(|c| c.header.step) != Some(iter as u64) {
                    run.checkpoints.push(Checkpoint::new(&run.policy, &run.value, iter as u64, lambda, cfg.seed));
                }
                return Err(TrainFailure { error, partial: run });
            }
        }
    }
    Ok(run)
}

fn train_iteration<F: EnvFactory>(
    cfg: &TrainConfig,
    factory: &F,
    objective: Objective,
    policy: &PolicyParams,
    value: &mut ValueParams,
    adam: &mut Adam,
    iter: usize,
) -> Result<(PolicyParams, TrainLogRow, StepDiagnostics)> {
    let mut batch = collect_batch(policy, factory, cfg, iter as u64)?;
    let j_hat = estimate_j(&batch, cfg.gamma);
    let nu_hat = reward_volatility(&batch, cfg.gamma, j_hat).sqrt();
    if let Objective::Trvo { lambda } = objective {
        transform_rewards(&mut batch, lambda, j_hat);
    }
    compute_value_targets(&mut batch, cfg.gamma);
    fit_value(
        value,
        adam,
        batch.features.view(),
        batch.value_targets.view(),
        cfg.value_epochs,
        cfg.value_minibatch,
        cfg.seed,
        iter as u64,
    )?;
    compute_advantages(&mut batch, value, cfg.gamma, cfg.gae_lambda)?;
    let (next, diag) = trpo_step(policy, &batch, cfg)?;
    let row = TrainLogRow {
        iter,
        j_hat,
        nu_hat,
        mean_pnl: batch.mean_episode_pnl(),
        mean_cost: batch.mean_episode_cost(),
        kl: diag.kl,
        surrogate_improvement: diag.surrogate_improvement,
        accepted: diag.accepted,
    };
    if !(j_hat.is_finite() && nu_hat.is_finite()) {
        return Err(Error::Numeric(format!("iteration {iter}: J_hat {j_hat}, nu_hat {nu_hat}")));
    }
    Ok((next, row, diag))
}

/// Writes the training log as CSV.
pub fn write_log_csv<W: std::io::Write>(log: &[TrainLogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
