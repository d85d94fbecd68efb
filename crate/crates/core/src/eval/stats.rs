use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::error::{Error, Result};

/// Magnitude reported for the t statistic of non-zero, zero-spread differences.
pub const T_STAT_CAP: f64 = 1e9;

/// Sum in ascending order, so the result ignores the input order.
pub(crate) fn sorted_sum(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    sorted_sum(x) / x.len() as f64
}

pub(crate) fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    let sq: Vec<f64> = x.iter().map(|v| (v - m) * (v - m)).collect();
    (sorted_sum(&sq) / (x.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile (`q` in `[0, 1]`) of unsorted samples.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Paired comparison of an agent against a reference on the same scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub delta_pnl: f64,
    pub delta_sigma: f64,
    pub pct_better: f64,
    pub t_stat: f64,
}

pub fn compare(agent: &EvalReport, reference: &EvalReport) -> Result<Comparison> {
    if agent.pnl.len() != reference.pnl.len() || agent.pnl.is_empty() {
        return Err(Error::Input(format!(
            "paired comparison needs equal non-empty samples, got {} and {}",
            agent.pnl.len(),
            reference.pnl.len()
        )));
    }
    let diffs: Vec<f64> = agent.pnl.iter().zip(&reference.pnl).map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let d_mean = mean(&diffs);
    let d_std = sample_std(&diffs);
    let t_stat = if d_std > 0.0 {
        (d_mean / (d_std / n.sqrt())).clamp(-T_STAT_CAP, T_STAT_CAP)
    } else if d_mean == 0.0 {
        0.0
    } else {
        T_STAT_CAP.copysign(d_mean)
    };
    Ok(Comparison {
        delta_pnl: mean(&agent.pnl) - mean(&reference.pnl),
        delta_sigma: sample_std(&agent.pnl) - sample_std(&reference.pnl),
        pct_better: diffs.iter().filter(|d| **d > 0.0).count() as f64 / n,
        t_stat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
    /// Mean of the strictly positive samples (0 when there are none).
    pub mean_positive: f64,
    /// Mean of the strictly negative samples (0 when there are none).
    pub mean_negative: f64,
    pub p5: f64,
}

impl Histogram {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for b in &self.bins {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Equal-width histogram over the sample range. Degenerate samples collapse
/// into one zero-width bin.
pub fn pnl_histogram(samples: &[f64], bins: usize) -> Result<Histogram> {
    if samples.is_empty() || bins == 0 {
        return Err(Error::Input("histogram needs samples and at least one bin".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("histogram samples must be finite".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins_out = if hi > lo {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &x in samples {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(k, count)| HistogramBin {
                bin_left: lo + k as f64 * width,
                bin_right: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
                count,
            })
            .collect()
    } else {
        vec![HistogramBin { bin_left: lo, bin_right: hi, count: samples.len() as u64 }]
    };
    let pos: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0).collect();
    let neg: Vec<f64> = samples.iter().copied().filter(|x| *x < 0.0).collect();
    Ok(Histogram {
        bins: bins_out,
        mean_positive: if pos.is_empty() { 0.0 } else { mean(&pos) },
        mean_negative: if neg.is_empty() { 0.0 } else { mean(&neg) },
        p5: quantile(samples, 0.05),
    })
}
