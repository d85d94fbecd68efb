//! Experiment configuration, presets and on-disk layout of run artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, FrontierPoint};
use crate::market::MarketSpec;
use crate::policy::Checkpoint;
use crate::pricing::{OptionSpec, Portfolio};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 10-day option, 12k-step batches, 300 iterations.
    Desk,
    /// 60-day option, 120k-step batches, 2000 iterations.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub lambda_grid: Vec<f64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => {
                let market = MarketSpec { n_days: 10, ..MarketSpec::default() };
                let env = EnvConfig {
                    portfolio: Portfolio::single(OptionSpec::atm(market.s0, market.n_days)),
                    market,
                    ..EnvConfig::default()
                };
                Self {
                    env,
                    train: TrainConfig::default(),
                    eval: EvalConfig::default(),
                    lambda_grid: vec![0.5, 2.0, 10.0],
                    output_dir: PathBuf::from("out"),
                }
            }
            Preset::Full => Self {
                env: EnvConfig::default(),
                train: TrainConfig { batch_steps: 120_000, iterations: 2000, ..TrainConfig::default() },
                eval: EvalConfig::default(),
                lambda_grid: vec![0.5, 0.75, 0.82, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 20.0],
                output_dir: PathBuf::from("out"),
            },
        }
    }

    /// Preset values overlaid with the keys present in `overrides` (a JSON object).
    pub fn from_preset_and_json(preset: Preset, overrides: Option<&str>) -> Result<Self> {
        let mut base = serde_json::to_value(Self::preset(preset))?;
        if let Some(text) = overrides {
            let patch: serde_json::Value =
                serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
            if !patch.is_object() {
                return Err(Error::Config("config must be a JSON object".into()));
            }
            merge(&mut base, patch);
        }
        serde_json::from_value(base).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(preset: Preset, path: Option<&Path>) -> Result<Self> {
        let text = path.map(fs::read_to_string).transpose()?;
        Self::from_preset_and_json(preset, text.as_deref())
    }

    /// Checks every section and reports all problems at once, each prefixed by its key.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut collect = |section: &str, r: Result<()>| match r {
            Ok(()) => {}
            Err(Error::Validation(list)) => problems.extend(list.into_iter().map(|p| format!("{section}: {p}"))),
            Err(e) => problems.push(format!("{section}: {e}")),
        };
        collect("env", self.env.validate());
        collect("train", self.train.validate(self.env.market.n_steps()));
        if self.eval.n_scenarios == 0 {
            problems.push("eval.n_scenarios must be >= 1".into());
        }
        if !(self.eval.gamma > 0.0 && self.eval.gamma < 1.0) {
            problems.push("eval.gamma must lie in (0, 1)".into());
        }
        if let Some(bad) = self.lambda_grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            problems.push(format!("lambda_grid entries must be finite and >= 0, got {bad}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex(&Sha256::digest(&bytes)))
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Contents of the `<file>.meta.json` sidecar written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub file: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

pub fn sidecar_path(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    file.with_file_name(name)
}

pub fn write_sidecar(file: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    let meta = Metadata {
        command: command.to_string(),
        file: file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        config_hash: cfg.hash()?,
        seed: cfg.train.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    fs::write(sidecar_path(file), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Writes `bytes` to `file` and its metadata sidecar.
pub fn write_output(file: &Path, bytes: &[u8], command: &str, cfg: &ExperimentConfig) -> Result<()> {
    if let Some(dir) = file.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(file, bytes)?;
    write_sidecar(file, command, cfg)
}

pub fn lambda_dir(output_dir: &Path, lambda: f64) -> PathBuf {
    output_dir.join(format!("lambda={lambda}"))
}

pub fn checkpoint_path(output_dir: &Path, lambda: f64, iteration: u64) -> PathBuf {
    lambda_dir(output_dir, lambda).join(format!("ckpt_{iteration}.json"))
}

/// The checkpoint with the highest iteration number in a `lambda=<v>` directory.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(iter) = name
            .strip_prefix("ckpt_")
            .and_then(|r| r.strip_suffix(".json"))
            .and_then(|r| r.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| iter > *b) {
            best = Some((iter, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Every `lambda=<v>` subdirectory of `root`, sorted by lambda.
pub fn lambda_dirs(root: &Path) -> Result<Vec<(f64, PathBuf)>> {
    let mut out = Vec::new();
    if !root.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let lambda = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("lambda="))
            .and_then(|v| v.parse::<f64>().ok());
        if let Some(l) = lambda {
            out.push((l, path));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

pub fn load_latest(dir: &Path) -> Result<Option<Checkpoint>> {
    latest_checkpoint(dir)?.map(|p| Checkpoint::load(&p)).transpose()
}

/// Scatter of `(delta_sigma, delta_pnl)` with the delta hedge at the origin,
/// the break-even diagonal, and `optimum` highlighted.
pub fn frontier_svg(points: &[FrontierPoint], optimum: Option<usize>) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    let xs = points.iter().map(|p| p.delta_sigma).chain([0.0]);
    let ys = points.iter().map(|p| p.delta_pnl).chain([0.0]);
    let range = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            if v.is_finite() { (a.min(v), b.max(v)) } else { (a, b) }
        });
        let span = (hi - lo).max(1e-6);
        (lo - 0.1 * span, hi + 0.1 * span)
    };
    let (x0, x1) = range(&mut xs.into_iter());
    let (y0, y1) = range(&mut ys.into_iter());
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\"/>\n",
        px(x0), py(0.0), px(x1), py(0.0)
    ));
    s.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\"/>\n",
        px(0.0), py(y0), px(0.0), py(y1)
    ));
    let (d0, d1) = (x0.max(y0), x1.min(y1));
    if d1 > d0 {
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n",
            px(d0), py(d0), px(d1), py(d1)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">delta sigma</text>\n",
        W / 2.0, H - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">delta p&amp;l</text>\n",
        H / 2.0, H / 2.0
    ));
    s.push_str(&format!(
        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"red\"><title>delta hedge</title></circle>\n",
        px(0.0), py(0.0)
    ));
    for (i, p) in points.iter().enumerate() {
        if !(p.delta_sigma.is_finite() && p.delta_pnl.is_finite()) {
            continue;
        }
        let (cx, cy) = (px(p.delta_sigma), py(p.delta_pnl));
        let fill = if Some(i) == optimum { "orange" } else { "steelblue" };
        s.push_str(&format!(
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"{fill}\"><title>lambda={}</title></circle>\n",
            p.lambda
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\">{}</text>\n",
            cx + 6.0, cy - 6.0, p.lambda
        ));
    }
    s.push_str("</svg>\n");
    s
}
