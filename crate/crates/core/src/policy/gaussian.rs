//! Gaussian policy `N(mu_theta(s), exp(log_std)^2)` with a state-independent
//! log standard deviation, plus the value baseline and the losses the
//! trust-region step differentiates.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, Layout, MlpParams};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Policy network weights with the trailing log-std slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams(pub MlpParams);

/// Value baseline weights (same layout, no log-std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueParams(pub MlpParams);

impl PolicyParams {
    pub fn new(params: MlpParams) -> Result<Self> {
        if !params.layout.log_std {
            return Err(Error::Parameter("policy layout must carry a log-std slot".into()));
        }
        Ok(Self(params))
    }

    /// Default initialization: orthogonal hidden weights with gain sqrt(2),
    /// output gain 0.01 and log-std `ln 0.5`.
    pub fn init<R: Rng + ?Sized>(hidden: &[usize], n_inputs: usize, rng: &mut R) -> Self {
        let mut sizes = vec![n_inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layout = Layout::new(sizes, true).expect("valid policy layout");
        let mut p = MlpParams::orthogonal(layout, 2f64.sqrt(), 0.01, rng);
        *p.flat.last_mut().unwrap() = 0.5f64.ln();
        Self(p)
    }

    pub fn zeros(layout: Layout) -> Result<Self> {
        Self::new(MlpParams::zeros(layout))
    }

    pub fn layout(&self) -> &Layout {
        &self.0.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.0.flat
    }

    pub fn raw_log_std(&self) -> f64 {
        *self.0.flat.last().unwrap()
    }

    pub fn set_log_std(&mut self, v: f64) {
        *self.0.flat.last_mut().unwrap() = v;
    }

    /// The log-std in effect, clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn log_std(&self) -> f64 {
        self.raw_log_std().clamp(LOG_STD_MIN, LOG_STD_MAX)
    }

    pub fn std(&self) -> f64 {
        self.log_std().exp()
    }

    fn log_std_active(&self) -> bool {
        let r = self.raw_log_std();
        (LOG_STD_MIN..=LOG_STD_MAX).contains(&r)
    }

    pub fn with_flat(&self, flat: Vec<f64>) -> Result<Self> {
        Ok(Self(MlpParams::from_flat(self.0.layout.clone(), flat)?))
    }

    pub fn means(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.0.outputs(batch)
    }
}

impl ValueParams {
    pub fn init<R: Rng + ?Sized>(hidden: &[usize], n_inputs: usize, rng: &mut R) -> Self {
        let mut sizes = vec![n_inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layout = Layout::new(sizes, false).expect("valid value layout");
        Self(MlpParams::orthogonal(layout, 2f64.sqrt(), 1.0, rng))
    }

    pub fn values(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.0.outputs(batch)
    }
}

fn single_row(features: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, features.len()), features).unwrap()
}

pub fn policy_mean(params: &PolicyParams, features: &[f64]) -> Result<f64> {
    Ok(params.means(single_row(features))?[0])
}

/// `mean + std * noise` for a caller-supplied standard normal draw.
pub fn sample_action(params: &PolicyParams, features: &[f64], noise: f64) -> Result<f64> {
    Ok(policy_mean(params, features)? + params.std() * noise)
}

pub fn gaussian_log_density(x: f64, mean: f64, log_std: f64) -> f64 {
    let z = (x - mean) * (-log_std).exp();
    -HALF_LN_2PI - log_std - 0.5 * z * z
}

pub fn log_prob(params: &PolicyParams, features: &[f64], action: f64) -> Result<f64> {
    Ok(gaussian_log_density(action, policy_mean(params, features)?, params.log_std()))
}

/// Closed-form `KL(N(m0, s0^2) || N(m1, s1^2))`.
pub fn gaussian_kl(m0: f64, ls0: f64, m1: f64, ls1: f64) -> f64 {
    let var_ratio = (2.0 * (ls0 - ls1)).exp();
    let d = (m0 - m1) * (-ls1).exp();
    ls1 - ls0 + 0.5 * (var_ratio + d * d) - 0.5
}

/// Batch average of `KL(old(.|s) || new(.|s))`.
pub fn mean_kl(old: &PolicyParams, new: &PolicyParams, batch: ArrayView2<f64>) -> Result<f64> {
    if old.layout() != new.layout() {
        return Err(Error::Shape { expected: old.layout().n_params(), got: new.layout().n_params() });
    }
    let m0 = old.means(batch)?;
    let m1 = new.means(batch)?;
    Ok(kl_of_means(m0.view(), old.log_std(), m1.view(), new.log_std()))
}

fn kl_of_means(m0: ArrayView1<f64>, ls0: f64, m1: ArrayView1<f64>, ls1: f64) -> f64 {
    let n = m0.len() as f64;
    m0.iter().zip(m1.iter()).map(|(&a, &b)| gaussian_kl(a, ls0, b, ls1)).sum::<f64>() / n
}

/// Scalar objectives with exact gradients.
#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    /// `mean_i exp(log pi(a_i|s_i) - old_log_prob_i) * advantage_i`.
    Surrogate {
        actions: ArrayView1<'a, f64>,
        advantages: ArrayView1<'a, f64>,
        old_log_probs: ArrayView1<'a, f64>,
    },
    /// Mean `KL(old || params)` over the batch.
    MeanKl { old: &'a PolicyParams },
    /// `mean_i (V(s_i) - target_i)^2` for a value network.
    ValueMse { targets: ArrayView1<'a, f64> },
}

impl LossSpec<'_> {
    fn name(&self) -> &'static str {
        match self {
            LossSpec::Surrogate { .. } => "surrogate",
            LossSpec::MeanKl { .. } => "mean_kl",
            LossSpec::ValueMse { .. } => "value_mse",
        }
    }
}

/// Loss value and its sensitivities to the network outputs and log-std.
fn loss_terms(
    loss: &LossSpec,
    outputs: ArrayView1<f64>,
    log_std: f64,
    old_means: Option<ArrayView1<f64>>,
) -> Result<(f64, Array1<f64>, f64)> {
    let n = outputs.len();
    let nf = n as f64;
    match *loss {
        LossSpec::Surrogate { actions, advantages, old_log_probs } => {
            check_len(n, actions.len())?;
            check_len(n, advantages.len())?;
            check_len(n, old_log_probs.len())?;
            let inv_std = (-log_std).exp();
            let mut value = 0.0;
            let mut g_mean = Array1::zeros(n);
            let mut g_ls = 0.0;
            for i in 0..n {
                let z = (actions[i] - outputs[i]) * inv_std;
                let lp = -HALF_LN_2PI - log_std - 0.5 * z * z;
                let w = (lp - old_log_probs[i]).exp() * advantages[i];
                value += w;
                g_mean[i] = w * z * inv_std / nf;
                g_ls += w * (z * z - 1.0);
            }
            Ok((value / nf, g_mean, g_ls / nf))
        }
        LossSpec::MeanKl { old } => {
            let m0 = old_means.expect("kl loss needs old means");
            let ls0 = old.log_std();
            let var0 = (2.0 * ls0).exp();
            let inv_var1 = (-2.0 * log_std).exp();
            let value = kl_of_means(m0, ls0, outputs, log_std);
            let mut g_ls = 0.0;
            let g_mean = Array1::from_shape_fn(n, |i| {
                let d = outputs[i] - m0[i];
                g_ls += 1.0 - (var0 + d * d) * inv_var1;
                d * inv_var1 / nf
            });
            Ok((value, g_mean, g_ls / nf))
        }
        LossSpec::ValueMse { targets } => {
            check_len(n, targets.len())?;
            let mut value = 0.0;
            let g_mean = Array1::from_shape_fn(n, |i| {
                let r = outputs[i] - targets[i];
                value += r * r;
                2.0 * r / nf
            });
            Ok((value / nf, g_mean, 0.0))
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}

fn effective_log_std(params: &MlpParams) -> (f64, bool) {
    if params.layout.log_std {
        let raw = *params.flat.last().unwrap();
        (raw.clamp(LOG_STD_MIN, LOG_STD_MAX), (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw))
    } else {
        (0.0, false)
    }
}

fn old_means_for(loss: &LossSpec, batch: ArrayView2<f64>) -> Result<Option<Array1<f64>>> {
    match loss {
        LossSpec::MeanKl { old } => Ok(Some(old.means(batch)?)),
        _ => Ok(None),
    }
}

/// Value of the loss at `params`.
pub fn loss_value(loss: &LossSpec, params: &MlpParams, batch: ArrayView2<f64>) -> Result<f64> {
    let out = params.outputs(batch)?;
    let old = old_means_for(loss, batch)?;
    let (ls, _) = effective_log_std(params);
    Ok(loss_terms(loss, out.view(), ls, old.as_ref().map(|m| m.view()))?.0)
}

/// Exact gradient of the loss with respect to the flat parameters.
pub fn gradients(loss: &LossSpec, params: &MlpParams, batch: ArrayView2<f64>) -> Result<Vec<f64>> {
    let cache = params.forward(batch)?;
    let old = old_means_for(loss, batch)?;
    loss_gradient_cached(loss, params, &cache, old.as_ref().map(|m| m.view())).map(|(_, g)| g)
}

pub(crate) fn loss_gradient_cached(
    loss: &LossSpec,
    params: &MlpParams,
    cache: &ForwardCache,
    old_means: Option<ArrayView1<f64>>,
) -> Result<(f64, Vec<f64>)> {
    let (ls, ls_active) = effective_log_std(params);
    let (value, g_mean, g_ls) = loss_terms(loss, cache.output(), ls, old_means)?;
    let mut grad = params.backward(cache, g_mean.view());
    if params.layout.log_std {
        *grad.last_mut().unwrap() = if ls_active { g_ls } else { 0.0 };
    }
    if !value.is_finite() {
        return Err(Error::Numeric(format!("{} loss is {value}", loss.name())));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "{} gradient coordinate {i} of {} is {} (loss {value}, log_std {ls})",
            loss.name(),
            grad.len(),
            grad[i]
        )));
    }
    Ok((value, grad))
}

/// Hessian of the mean KL at `new = old = params`, applied to vectors.
///
/// At coinciding distributions the second-order network terms vanish and
/// the Hessian is `J^T J / (N sigma^2)` on the mean weights plus `2` on the
/// log-std, which this operator applies with one JVP and one VJP.
pub struct FisherOperator<'a> {
    params: &'a PolicyParams,
    cache: ForwardCache,
    damping: f64,
}

impl<'a> FisherOperator<'a> {
    pub fn new(params: &'a PolicyParams, batch: ArrayView2<f64>, damping: f64) -> Result<Self> {
        let cache = params.0.forward(batch)?;
        Ok(Self { params, cache, damping })
    }

    pub fn dim(&self) -> usize {
        self.params.layout().n_params()
    }

    pub fn apply_undamped(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), v.len())?;
        let n = self.cache.batch_len() as f64;
        let inv_var = (-2.0 * self.params.log_std()).exp();
        let mut jv = self.params.0.jvp(&self.cache, v);
        jv.mapv_inplace(|x| x * inv_var / n);
        let mut out = self.params.0.backward(&self.cache, jv.view());
        let last = out.len() - 1;
        out[last] = if self.params.log_std_active() { 2.0 * v[last] } else { 0.0 };
        if let Some(i) = out.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("fisher-vector product coordinate {i} is {}", out[i])));
        }
        Ok(out)
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.apply_undamped(v)?;
        for (o, x) in out.iter_mut().zip(v) {
            *o += self.damping * x;
        }
        Ok(out)
    }
}

pub fn fisher_vector_product(
    params: &PolicyParams,
    batch: ArrayView2<f64>,
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    FisherOperator::new(params, batch, damping)?.apply(v)
}
