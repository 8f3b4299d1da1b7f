use serde::Serialize;

use crate::error::{Error, Result};
use crate::observable::GridObservable;
use crate::spectral::{batch_means, lag_correlations, lambda_fd, DecayFit, EigenSettings, EquivariantChain, BATCHES};
use crate::transfer::Cocycle;

use super::BirkhoffSample;

/// Blocks for the jackknife of the Monte Carlo second moment.
pub const JACKKNIFE_BLOCKS: usize = 100;

/// Truncated autocorrelation series for `Σ²`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeriesEstimate {
    pub sigma2: f64,
    /// Batch-means error of the Birkhoff average over fibers.
    pub stderr: f64,
    /// `2 B² Ẑ ρ̂^{h_max+1} / (1 − ρ̂)`.
    pub tail_bound: f64,
    pub h_max: usize,
    pub n_fibers: usize,
}

/// Fiber average of `∫ψ_j² v̂_j + 2 Σ_{h≤h_max} ∫ L^h(ψ_j v̂_j) ψ_{j+h}`
/// over fibers `0..n_fibers`. `bv_bound` is the sup of the fiber BV norms of
/// the working observable.
pub fn variance_series(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    chain: &EquivariantChain,
    decay: &DecayFit,
    h_max: usize,
    n_fibers: usize,
    bv_bound: f64,
) -> Result<SeriesEstimate> {
    if decay.rho_hat >= 1.0 {
        return Err(Error::Refused(format!(
            "fitted decay rate {} >= 1 gives no tail certificate for the series",
            decay.rho_hat
        )));
    }
    let c = lag_correlations(cocycle, obs, chain, 0, n_fibers as i64, h_max)?;
    let per_fiber: Vec<f64> = c
        .iter()
        .map(|row| row[0] + 2.0 * row[1..].iter().sum::<f64>())
        .collect();
    let (sigma2, stderr) = batch_means(&per_fiber, BATCHES);
    let rho = decay.rho_hat;
    let tail_bound = 2.0 * bv_bound * bv_bound * decay.z_hat * rho.powi(h_max as i32 + 1) / (1.0 - rho);
    Ok(SeriesEstimate {
        sigma2,
        stderr,
        tail_bound,
        h_max,
        n_fibers,
    })
}

/// `(1/n) E[S_n²]` with a delete-one-block jackknife standard error.
pub fn variance_mc(sample: &BirkhoffSample) -> (f64, f64) {
    let n = sample.n.max(1) as f64;
    let sq: Vec<f64> = sample.values.iter().map(|s| s * s / n).collect();
    jackknife_mean(&sq, JACKKNIFE_BLOCKS)
}

/// Mean and block-jackknife standard error.
pub fn jackknife_mean(xs: &[f64], blocks: usize) -> (f64, f64) {
    let m = xs.len();
    let total: f64 = xs.iter().sum();
    let mean = total / m as f64;
    let b = blocks.min(m);
    if b < 2 {
        return (mean, f64::NAN);
    }
    let size = m / b;
    let used = size * b;
    let used_total: f64 = xs[..used].iter().sum();
    let loo: Vec<f64> = (0..b)
        .map(|k| {
            let block: f64 = xs[k * size..(k + 1) * size].iter().sum();
            (used_total - block) / (used - size) as f64
        })
        .collect();
    let lm = loo.iter().sum::<f64>() / b as f64;
    let var = (b - 1) as f64 / b as f64 * loo.iter().map(|x| (x - lm) * (x - lm)).sum::<f64>();
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    /// `None` when the series was refused.
    pub series: Option<SeriesEstimate>,
    pub series_note: Option<String>,
    pub sigma2_mc: f64,
    pub mc_stderr: f64,
    pub mc_n: usize,
    pub sigma2_fd: f64,
    pub fd_stderr: f64,
    pub h_fd: f64,
}

impl VarianceReport {
    pub fn sigma2_series(&self) -> Option<f64> {
        self.series.map(|s| s.sigma2)
    }
}

/// Inputs of the three variance estimators.
#[derive(Debug, Clone, Copy)]
pub struct VarianceSettings {
    pub h_max: usize,
    pub n_fibers: usize,
    pub bv_bound: f64,
    pub h_fd: f64,
    pub eigen: EigenSettings,
}

/// Series, Monte Carlo and finite-difference estimates of `Σ²`.
pub fn variance(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    chain: &EquivariantChain,
    decay: &DecayFit,
    sample: &BirkhoffSample,
    settings: &VarianceSettings,
) -> Result<VarianceReport> {
    let (series, series_note) = match variance_series(
        cocycle,
        obs,
        chain,
        decay,
        settings.h_max,
        settings.n_fibers,
        settings.bv_bound,
    ) {
        Ok(s) => (Some(s), None),
        Err(Error::Refused(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };
    let (sigma2_mc, mc_stderr) = variance_mc(sample);
    let d = lambda_fd(cocycle, obs, settings.h_fd, &settings.eigen)?;
    Ok(VarianceReport {
        series,
        series_note,
        sigma2_mc,
        mc_stderr,
        mc_n: sample.n,
        sigma2_fd: d.second,
        fd_stderr: d.second_stderr,
        h_fd: settings.h_fd,
    })
}
