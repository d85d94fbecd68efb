#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use trvo_hedge::policy::{Layout, MlpParams, PolicyParams, ValueParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A 4-8-8-1 policy with O(1) output weights and a random log-std.
pub fn random_policy(rng: &mut ChaCha8Rng) -> PolicyParams {
    let layout = Layout::new(vec![4, 8, 8, 1], true).unwrap();
    let mut p = MlpParams::orthogonal(layout, 1.5, 1.0, rng);
    for b in p.flat.iter_mut() {
        *b += 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    let mut p = PolicyParams(p);
    p.set_log_std(rng.random_range(-1.0..0.5));
    p
}

pub fn random_value(rng: &mut ChaCha8Rng) -> ValueParams {
    let layout = Layout::new(vec![4, 8, 8, 1], false).unwrap();
    ValueParams(MlpParams::orthogonal(layout, 1.5, 1.0, rng))
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, width), |_| rng.sample::<f64, _>(StandardNormal))
}

pub fn perturb(p: &PolicyParams, rng: &mut ChaCha8Rng, scale: f64) -> PolicyParams {
    let flat = p.flat().iter().map(|x| x + scale * rng.sample::<f64, _>(StandardNormal)).collect();
    p.with_flat(flat).unwrap()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sample_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Spearman rank correlation (no ties expected).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        for (rank, i) in idx.into_iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
