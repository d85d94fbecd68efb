//! Value baseline regression with minibatch Adam.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::Result;
use crate::market::path_rng;
use crate::policy::{gradients, LossSpec, ValueParams};
use crate::streams;

/// Adam moments, kept across training iterations.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(dim: usize, lr: f64) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], t: 0, lr }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Runs `epochs` passes of shuffled minibatch Adam on the MSE to `targets`.
/// The shuffle order is drawn from the `(seed, iteration)` stream.
#[allow(clippy::too_many_arguments)]
pub fn fit_value(
    value: &mut ValueParams,
    opt: &mut Adam,
    features: ArrayView2<f64>,
    targets: ArrayView1<f64>,
    epochs: usize,
    minibatch: usize,
    seed: u64,
    iteration: u64,
) -> Result<f64> {
    let n = features.nrows();
    let mb = minibatch.clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = path_rng(seed, streams::SHUFFLE + iteration);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(mb) {
            let x = features.select(Axis(0), chunk);
            let y: Array1<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let g = gradients(&LossSpec::ValueMse { targets: y.view() }, &value.0, x.view())?;
            opt.step(&mut value.0.flat, &g);
        }
    }
    let pred = value.values(features)?;
    Ok(pred.iter().zip(targets.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64)
}
