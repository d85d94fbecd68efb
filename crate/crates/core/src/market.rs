//! GBM scenario generation.
//!
//! Prices are stepped with the exact lognormal solution
//! `S_{t+1} = S_t exp((mu - sigma^2/2) dt + sigma sqrt(dt) z)`.
//! Each path draws its normals from its own ChaCha stream keyed on
//! `(seed, stream id)`, so a path is reproducible regardless of how many
//! other paths are generated or in what order.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// GBM market parameters and the simulation time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSpec {
    pub s0: f64,
    pub mu: f64,
    pub sigma: f64,
    pub steps_per_day: u32,
    pub n_days: u32,
    /// Days per year used to convert days into year fractions (ACT/365 by default).
    pub day_count: f64,
}

impl Default for MarketSpec {
    fn default() -> Self {
        Self {
            s0: 100.0,
            mu: 0.0,
            sigma: 0.20,
            steps_per_day: 5,
            n_days: 60,
            day_count: 365.0,
        }
    }
}

impl MarketSpec {
    pub fn n_steps(&self) -> usize {
        self.steps_per_day as usize * self.n_days as usize
    }

    /// Step size in years.
    pub fn dt(&self) -> f64 {
        1.0 / (self.steps_per_day as f64 * self.day_count)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.s0, self.mu, self.sigma, self.day_count];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter(format!("non-finite market parameter in {self:?}")));
        }
        if self.s0 <= 0.0 {
            return Err(Error::Parameter(format!("s0 must be positive, got {}", self.s0)));
        }
        if self.sigma < 0.0 {
            return Err(Error::Parameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.steps_per_day == 0 || self.n_days == 0 {
            return Err(Error::Parameter("steps_per_day and n_days must be >= 1".into()));
        }
        if self.day_count <= 0.0 {
            return Err(Error::Parameter(format!("day_count must be positive, got {}", self.day_count)));
        }
        Ok(())
    }
}

/// An immutable matrix of simulated prices, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    prices: Vec<f64>,
    n_paths: usize,
    n_cols: usize,
    pub dt: f64,
    pub seed: u64,
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_cols - 1
    }

    pub fn path(&self, i: usize) -> &[f64] {
        &self.prices[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.prices.chunks_exact(self.n_cols)
    }

    pub fn terminal_prices(&self) -> Vec<f64> {
        self.paths().map(|p| p[p.len() - 1]).collect()
    }

    /// Writes the set as long-format CSV with header `path_id,step,price`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path_id", "step", "price"])?;
        for (i, path) in self.paths().enumerate() {
            for (t, price) in path.iter().enumerate() {
                w.write_record([i.to_string(), t.to_string(), price.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Deterministic generator for the normal draws of one path.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fills `out` with one GBM path of `spec.n_steps() + 1` prices.
pub fn simulate_path_into(spec: &MarketSpec, seed: u64, stream: u64, out: &mut [f64]) {
    let dt = spec.dt();
    let drift = (spec.mu - 0.5 * spec.sigma * spec.sigma) * dt;
    let diffusion = spec.sigma * dt.sqrt();
    let mut rng = path_rng(seed, stream);
    out[0] = spec.s0;
    for t in 1..out.len() {
        let z: f64 = StandardNormal.sample(&mut rng);
        out[t] = out[t - 1] * (drift + diffusion * z).exp();
    }
}

/// One path drawn from stream `stream` of `seed`.
pub fn simulate_path(spec: &MarketSpec, seed: u64, stream: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut out = vec![0.0; spec.n_steps() + 1];
    simulate_path_into(spec, seed, stream, &mut out);
    Ok(out)
}

/// Generates `n_paths` paths using streams `0..n_paths` of `seed`.
pub fn generate_paths(spec: &MarketSpec, n_paths: usize, seed: u64) -> Result<PathSet> {
    generate_paths_from(spec, n_paths, seed, 0)
}

/// Generates `n_paths` paths using streams `first_stream..first_stream + n_paths`.
pub fn generate_paths_from(
    spec: &MarketSpec,
    n_paths: usize,
    seed: u64,
    first_stream: u64,
) -> Result<PathSet> {
    spec.validate()?;
    if n_paths == 0 {
        return Err(Error::Parameter("n_paths must be >= 1".into()));
    }
    let n_cols = spec.n_steps() + 1;
    let mut prices = vec![0.0; n_paths * n_cols];
    prices
        .par_chunks_mut(n_cols)
        .enumerate()
        .for_each(|(i, row)| simulate_path_into(spec, seed, first_stream + i as u64, row));
    Ok(PathSet {
        prices,
        n_paths,
        n_cols,
        dt: spec.dt(),
        seed,
    })
}
