//! Command-line surface. [`run`] parses arguments, dispatches a command and
//! maps failures onto exit codes: 0 success, 1 usage, 2 validation, 3 runtime.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::{
    compare, evaluate, frontier_point, optimum_index, pnl_histogram, robustness_suite, write_robustness_csv,
    DeltaHedge, EvalReport, FrontierPoint, PolicyHedger, ZeroHedge,
};
use crate::experiment::{
    checkpoint_path, frontier_svg, lambda_dir, lambda_dirs, load_latest, write_output, ExperimentConfig, Preset,
};
use crate::market::generate_paths;
use crate::policy::{Checkpoint, PolicyParams};
use crate::pricing::bs_call;
use crate::trainer::{train_objective, write_log_csv, HedgingTask, Objective, TrainFailure, TrainRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "trvo-hedge", version, about = "Risk-averse reinforcement learning for option hedging")]
pub struct Cli {
    /// JSON file overriding fields of the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for training and evaluation streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Black-Scholes price and delta of a call.
    Price(PriceArgs),
    /// Simulate GBM paths to paths.csv.
    Simulate(SimulateArgs),
    /// Train one agent and write its log and checkpoints.
    Train(TrainArgs),
    /// Evaluate delta and zero hedges, and optionally a checkpoint, out of sample.
    Eval(EvalArgs),
    /// Train or reuse an agent per lambda and build the frontier against the delta hedge.
    Frontier(FrontierArgs),
    /// Evaluate stored agents on modified options.
    Robustness(RobustnessArgs),
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub spot: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub strike: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.2)]
    pub vol: f64,
    /// Days to maturity.
    #[arg(long, allow_negative_numbers = true)]
    pub days: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 365.0)]
    pub day_count: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n_paths: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Risk aversion; the configured train.lambda_risk when absent.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Agent checkpoint to evaluate against the delta hedge.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Bins of the paired p&l difference histogram.
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct FrontierArgs {
    /// Retrain even when a checkpoint for the lambda already exists.
    #[arg(long)]
    pub retrain: bool,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    /// Directory holding lambda=<v> checkpoint folders; the output directory when absent.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parameter(_)
        | Error::Domain(_)
        | Error::Config(_)
        | Error::Shape { .. }
        | Error::Validation(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Command::Price(a) = &cli.command {
        return cmd_price(a);
    }
    let cfg = resolve_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cli.jobs)))?;
    pool.install(|| match &cli.command {
        Command::Price(_) => unreachable!(),
        Command::Simulate(a) => cmd_simulate(&cfg, a),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Frontier(a) => cmd_frontier(&cfg, a),
        Command::Robustness(a) => cmd_robustness(&cfg, a),
    })
}

/// Preset, then the config file, then `--seed` and `--out`; validated.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(cli.preset, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_price(a: &PriceArgs) -> Result<()> {
    let mut problems = Vec::new();
    for (name, v) in [("spot", a.spot), ("strike", a.strike), ("day-count", a.day_count)] {
        if !(v > 0.0 && v.is_finite()) {
            problems.push(format!("--{name} must be positive, got {v}"));
        }
    }
    if !(a.vol >= 0.0 && a.vol.is_finite()) {
        problems.push(format!("--vol must be >= 0, got {}", a.vol));
    }
    if !(a.days >= 0.0 && a.days.is_finite()) {
        problems.push(format!("--days must be >= 0, got {}", a.days));
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let (price, delta) = bs_call(a.spot, a.strike, a.vol, a.days / a.day_count, a.mu)?;
    println!("{}", json!({ "price": price, "delta": delta }));
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig, a: &SimulateArgs) -> Result<()> {
    let paths = generate_paths(&cfg.env.market, a.n_paths, cfg.train.seed)?;
    let mut buf = Vec::new();
    paths.write_csv(&mut buf)?;
    let file = cfg.output_dir.join("paths.csv");
    write_output(&file, &buf, "simulate", cfg)?;
    let terminal = paths.terminal_prices();
    let n = terminal.len() as f64;
    let mean = terminal.iter().sum::<f64>() / n;
    let std = if terminal.len() > 1 {
        (terminal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    println!(
        "{}",
        json!({ "file": file.display().to_string(), "n_paths": a.n_paths, "terminal_mean": mean, "terminal_std": std })
    );
    Ok(())
}

/// Trains at `lambda` and writes `lambda=<v>/train_log.csv` plus checkpoints.
/// On a numeric failure the partial log and the last valid checkpoint are still written.
pub fn train_and_store(cfg: &ExperimentConfig, lambda: f64) -> Result<TrainRun> {
    let mut tc = cfg.train.clone();
    tc.lambda_risk = lambda;
    tc.validate(cfg.env.market.n_steps())?;
    let task = HedgingTask::new(cfg.env.clone(), tc.seed, tc.scenario_pool)?;
    let mut run_cfg = cfg.clone();
    run_cfg.train = tc.clone();
    let result = train_objective(&tc, &task, Objective::Trvo { lambda }, |row| {
        if row.iter % 10 == 0 {
            log::info!(
                "lambda={lambda} iter {} J={:.6} nu={:.6} pnl={:.4} cost={:.4} kl={:.6}",
                row.iter, row.j_hat, row.nu_hat, row.mean_pnl, row.mean_cost, row.kl
            );
        }
    });
    let (run, err) = match result {
        Ok(run) => (run, None),
        Err(TrainFailure { error, partial }) => (partial, Some(error)),
    };
    let dir = lambda_dir(&cfg.output_dir, lambda);
    let mut buf = Vec::new();
    write_log_csv(&run.log, &mut buf)?;
    write_output(&dir.join("train_log.csv"), &buf, "train", &run_cfg)?;
    for ckpt in &run.checkpoints {
        let path = checkpoint_path(&cfg.output_dir, lambda, ckpt.header.step);
        write_output(&path, ckpt.to_json()?.as_bytes(), "train", &run_cfg)?;
    }
    match err {
        Some(e) => Err(e),
        None => Ok(run),
    }
}

fn cmd_train(cfg: &ExperimentConfig, a: &TrainArgs) -> Result<()> {
    let lambda = a.lambda.unwrap_or(cfg.train.lambda_risk);
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Validation(vec![format!("train.lambda_risk must be >= 0, got {lambda}")]));
    }
    let run = train_and_store(cfg, lambda)?;
    let last = run.log.last();
    println!(
        "{}",
        json!({
            "lambda": lambda,
            "iterations": run.log.len(),
            "final_mean_pnl": last.map(|r| r.mean_pnl),
            "final_mean_cost": last.map(|r| r.mean_cost),
            "dir": lambda_dir(&cfg.output_dir, lambda).display().to_string(),
        })
    );
    Ok(())
}

fn report_row(w: &mut csv::Writer<&mut Vec<u8>>, name: &str, r: &EvalReport) -> Result<()> {
    w.write_record([
        name.to_string(),
        r.mean_pnl.to_string(),
        r.pnl_vol.to_string(),
        r.reward_vol.to_string(),
        r.mean_cost.to_string(),
        r.n_scenarios.to_string(),
    ])?;
    Ok(())
}

fn agent_from(ckpt: &Checkpoint, cfg: &ExperimentConfig) -> Result<PolicyParams> {
    let policy = ckpt.policy()?;
    if policy.layout().n_inputs() != cfg.env.n_features() {
        return Err(Error::Shape { expected: cfg.env.n_features(), got: policy.layout().n_inputs() });
    }
    Ok(policy)
}

fn cmd_eval(cfg: &ExperimentConfig, a: &EvalArgs) -> Result<()> {
    let delta = evaluate(&DeltaHedge, &cfg.env, &cfg.eval)?;
    let zero = evaluate(&ZeroHedge, &cfg.env, &cfg.eval)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["hedger", "mean_pnl", "pnl_vol", "reward_vol", "mean_cost", "n_scenarios"])?;
        report_row(&mut w, "delta", &delta)?;
        report_row(&mut w, "zero", &zero)?;
        if let Some(path) = &a.checkpoint {
            let ckpt = Checkpoint::load(path)?;
            let agent = evaluate(&PolicyHedger { policy: agent_from(&ckpt, cfg)? }, &cfg.env, &cfg.eval)?;
            report_row(&mut w, "agent", &agent)?;
            let cmp = compare(&agent, &delta)?;
            let diffs: Vec<f64> = agent.pnl.iter().zip(&delta.pnl).map(|(x, y)| x - y).collect();
            let hist = pnl_histogram(&diffs, a.bins)?;
            let mut hbuf = Vec::new();
            hist.write_csv(&mut hbuf)?;
            write_output(&cfg.output_dir.join("histogram.csv"), &hbuf, "eval", cfg)?;
            println!(
                "{}",
                json!({
                    "lambda": ckpt.header.lambda,
                    "delta_pnl": cmp.delta_pnl,
                    "delta_sigma": cmp.delta_sigma,
                    "pct_better": cmp.pct_better,
                    "t_stat": cmp.t_stat,
                    "mean_better": hist.mean_positive,
                    "mean_worse": hist.mean_negative,
                    "p5": hist.p5,
                })
            );
        }
        w.flush()?;
    }
    write_output(&cfg.output_dir.join("eval.csv"), &buf, "eval", cfg)?;
    println!(
        "{}",
        json!({ "delta_mean_pnl": delta.mean_pnl, "delta_pnl_vol": delta.pnl_vol, "delta_mean_cost": delta.mean_cost })
    );
    Ok(())
}

/// Agent for `lambda`: the latest stored checkpoint unless `retrain`, else a fresh run.
pub fn agent_for_lambda(cfg: &ExperimentConfig, lambda: f64, retrain: bool) -> Result<PolicyParams> {
    if !retrain {
        if let Some(ckpt) = load_latest(&lambda_dir(&cfg.output_dir, lambda))? {
            log::info!("lambda={lambda}: reusing checkpoint at step {}", ckpt.header.step);
            return agent_from(&ckpt, cfg);
        }
    }
    Ok(train_and_store(cfg, lambda)?.policy)
}

fn write_frontier(cfg: &ExperimentConfig, points: &[FrontierPoint]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for p in points {
            w.serialize(p)?;
        }
        if points.is_empty() {
            w.write_record(["lambda", "delta_pnl", "delta_sigma", "reward_vol", "mean_cost", "pct_better", "t_stat"])?;
        }
        w.flush()?;
    }
    write_output(&cfg.output_dir.join("frontier.csv"), &buf, "frontier", cfg)?;
    let svg = frontier_svg(points, optimum_index(points));
    write_output(&cfg.output_dir.join("frontier.svg"), svg.as_bytes(), "frontier", cfg)
}

fn cmd_frontier(cfg: &ExperimentConfig, a: &FrontierArgs) -> Result<()> {
    if cfg.lambda_grid.is_empty() {
        return Err(Error::Validation(vec!["lambda_grid must not be empty for a frontier run".into()]));
    }
    let points = crate::eval::frontier(&cfg.lambda_grid, &cfg.env, &cfg.eval, |l| {
        agent_for_lambda(cfg, l, a.retrain)
    })?;
    write_frontier(cfg, &points)?;
    let opt = optimum_index(&points).map(|i| points[i].lambda);
    println!("{}", json!({ "points": points.len(), "optimum_lambda": opt }));
    Ok(())
}

/// Latest checkpoint per `lambda=<v>` folder under `root` that fits the environment.
pub fn stored_agents(root: &Path, cfg: &ExperimentConfig) -> Result<Vec<(f64, PolicyParams)>> {
    let mut agents = Vec::new();
    for (lambda, dir) in lambda_dirs(root)? {
        match load_latest(&dir).and_then(|c| c.map(|c| agent_from(&c, cfg)).transpose()) {
            Ok(Some(p)) => agents.push((lambda, p)),
            Ok(None) => log::warn!("no checkpoint in {}, skipped", dir.display()),
            Err(e) => log::warn!("unusable checkpoint in {}: {e}, skipped", dir.display()),
        }
    }
    Ok(agents)
}

fn cmd_robustness(cfg: &ExperimentConfig, a: &RobustnessArgs) -> Result<()> {
    let root = a.checkpoints.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let agents = stored_agents(&root, cfg)?;
    if agents.is_empty() {
        log::warn!("no checkpoints found under {}", root.display());
    }
    let rows = robustness_suite(&agents, &cfg.env, &cfg.eval)?;
    let mut buf = Vec::new();
    write_robustness_csv(&rows, &mut buf)?;
    write_output(&cfg.output_dir.join("robustness.csv"), &buf, "robustness", cfg)?;
    println!("{}", json!({ "agents": agents.len(), "rows": rows.len() }));
    Ok(())
}

/// Paired frontier point of a stored checkpoint against the delta hedge.
pub fn checkpoint_point(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> Result<FrontierPoint> {
    let hedge = evaluate(&DeltaHedge, &cfg.env, &cfg.eval)?;
    let agent = evaluate(&PolicyHedger { policy: agent_from(ckpt, cfg)? }, &cfg.env, &cfg.eval)?;
    frontier_point(ckpt.header.lambda, &agent, &hedge)
}
