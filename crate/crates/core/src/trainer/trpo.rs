//! Natural-gradient step with a KL-constrained backtracking line search.

use ndarray::{Array1, ArrayView1};

use super::{batch::TrajectoryBatch, TrainConfig};
use crate::error::{Error, Result};
use crate::policy::{gaussian_kl, gradients, loss_value, FisherOperator, LossSpec, PolicyParams};

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Non-positive curvature `p^T A p <= 0` was met.
    pub breakdown: bool,
    pub residual_norm: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A` given as a product.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], max_iters: usize, residual_tol: f64) -> Result<CgSolution>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let mut breakdown = false;
    while iterations < max_iters && rr > residual_tol * residual_tol {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            breakdown = true;
            break;
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iterations += 1;
    }
    Ok(CgSolution { x, iterations, breakdown, residual_norm: rr.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    pub kl: f64,
    pub surrogate_improvement: f64,
    pub accepted: bool,
    pub backtracks: usize,
    /// CG broke down and a plain gradient direction was used.
    pub fallback: bool,
    pub cg_iterations: usize,
    pub grad_norm: f64,
}

/// One trust-region update of `policy` on `batch`.
///
/// The candidate `theta_old + c^j * sqrt(2 max_kl / d^T F d) * d` is accepted
/// for the first `j` at which the mean KL stays within `max_kl` and the
/// sampled surrogate improves; otherwise the policy is returned unchanged.
pub fn trpo_step(
    policy: &PolicyParams,
    batch: &TrajectoryBatch,
    cfg: &TrainConfig,
) -> Result<(PolicyParams, StepDiagnostics)> {
    let features = batch.features.view();
    let loss = LossSpec::Surrogate {
        actions: batch.actions.view(),
        advantages: batch.advantages.view(),
        old_log_probs: batch.old_log_probs.view(),
    };
    let base = loss_value(&loss, &policy.0, features)?;
    let grad = gradients(&loss, &policy.0, features)?;
    let grad_norm = dot(&grad, &grad).sqrt();
    let mut diag = StepDiagnostics { grad_norm, ..Default::default() };
    if grad_norm == 0.0 {
        return Ok((policy.clone(), diag));
    }

    let fisher = FisherOperator::new(policy, features, cfg.cg_damping)?;
    let cg = conjugate_gradient(|v| fisher.apply(v), &grad, cfg.cg_iters, 1e-10)?;
    diag.cg_iterations = cg.iterations;
    let mut direction = cg.x;
    let mut curvature = dot(&direction, &fisher.apply_undamped(&direction)?);
    if cg.breakdown || !(curvature > 0.0) || direction.iter().any(|x| !x.is_finite()) {
        diag.fallback = true;
        direction = grad.clone();
        curvature = dot(&direction, &fisher.apply_undamped(&direction)?);
        if !(curvature > 0.0) {
            return Ok((policy.clone(), diag));
        }
    }
    let scale = (2.0 * cfg.max_kl / curvature).sqrt();

    let old_means = policy.means(features)?;
    let old_ls = policy.log_std();
    let theta0 = policy.flat();
    for j in 0..cfg.backtrack_steps {
        let frac = scale * cfg.backtrack_coeff.powi(j as i32);
        let flat: Vec<f64> = theta0.iter().zip(&direction).map(|(t, d)| t + frac * d).collect();
        let candidate = policy.with_flat(flat)?;
        let (surrogate, kl) = evaluate_candidate(&candidate, batch, old_means.view(), old_ls)?;
        let improvement = surrogate - base;
        if !(surrogate.is_finite() && kl.is_finite()) {
            return Err(Error::Numeric(format!("line search produced surrogate {surrogate}, kl {kl}")));
        }
        if kl <= cfg.max_kl && improvement > 0.0 {
            diag.kl = kl;
            diag.surrogate_improvement = improvement;
            diag.accepted = true;
            diag.backtracks = j;
            return Ok((candidate, diag));
        }
    }
    diag.backtracks = cfg.backtrack_steps;
    Ok((policy.clone(), diag))
}

/// Surrogate and mean KL from the old policy from a single forward pass.
fn evaluate_candidate(
    candidate: &PolicyParams,
    batch: &TrajectoryBatch,
    old_means: ArrayView1<f64>,
    old_ls: f64,
) -> Result<(f64, f64)> {
    let means: Array1<f64> = candidate.means(batch.features.view())?;
    let ls = candidate.log_std();
    let inv_std = (-ls).exp();
    let n = means.len() as f64;
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    for i in 0..means.len() {
        let z = (batch.actions[i] - means[i]) * inv_std;
        let lp = -0.918_938_533_204_672_7 - ls - 0.5 * z * z;
        surrogate += (lp - batch.old_log_probs[i]).exp() * batch.advantages[i];
        kl += gaussian_kl(old_means[i], old_ls, means[i], ls);
    }
    Ok((surrogate / n, kl / n))
}
