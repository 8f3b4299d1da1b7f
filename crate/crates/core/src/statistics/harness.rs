use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::observable::GridObservable;
use crate::spectral::{AperiodicityReport, LambdaPoint};
use crate::transfer::{Cocycle, GridDensity};

use super::BirkhoffSample;

/// Minimum tail count for a reported LDP rate.
pub const MIN_TAIL_COUNT: usize = 30;
/// Normal quantile of the 95% Wilson interval.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;
const CLT_GRID_POINTS: usize = 101;

fn normal(sigma2: f64) -> Result<Normal> {
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateVariance(sigma2));
    }
    Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::Numeric(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct CltResult {
    pub n: usize,
    pub sigma2: f64,
    pub ks_distance: f64,
    pub threshold: f64,
    pub pass: bool,
    /// `(x, empirical CDF, Gaussian CDF)` on `[−4σ, 4σ]`.
    pub cdf_grid: Vec<(f64, f64, f64)>,
}

/// Kolmogorov–Smirnov distance of `values / √n` from `N(0, σ²)`.
pub fn ks_distance(values: &[f64], scale: f64, dist: &Normal) -> f64 {
    let mut xs: Vec<f64> = values.iter().map(|v| v / scale).collect();
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = dist.cdf(*x);
            f64::max(f - i as f64 / m, (i + 1) as f64 / m - f)
        })
        .fold(0.0, f64::max)
}

pub fn clt_test(sample: &BirkhoffSample, sigma2: f64, threshold: f64) -> Result<CltResult> {
    let dist = normal(sigma2)?;
    let scale = (sample.n.max(1) as f64).sqrt();
    let d = ks_distance(&sample.values, scale, &dist);
    let mut sorted: Vec<f64> = sample.values.iter().map(|v| v / scale).collect();
    sorted.sort_by(f64::total_cmp);
    let sd = sigma2.sqrt();
    let cdf_grid = (0..CLT_GRID_POINTS)
        .map(|k| {
            let x = -4.0 * sd + 8.0 * sd * k as f64 / (CLT_GRID_POINTS - 1) as f64;
            let emp = sorted.partition_point(|v| *v <= x) as f64 / sorted.len() as f64;
            (x, emp, dist.cdf(x))
        })
        .collect();
    Ok(CltResult {
        n: sample.n,
        sigma2,
        ks_distance: d,
        threshold,
        pass: d < threshold,
        cdf_grid,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RatePoint {
    pub epsilon: f64,
    pub c: f64,
    /// Maximizing θ of the discrete Legendre transform.
    pub theta_star: f64,
}

/// Discrete Legendre transform `c(ε) = max_θ (θε − Λ̂(θ))` over the curve.
/// Fails when the curve is not convex within three combined standard errors.
pub fn ldp_rate(curve: &[LambdaPoint], eps_grid: &[f64]) -> Result<Vec<RatePoint>> {
    if curve.len() < 3 {
        return Err(Error::config("harness.theta_grid", "need at least three points"));
    }
    let mut pts = curve.to_vec();
    pts.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    for w in pts.windows(3) {
        let (h1, h2) = (w[1].theta - w[0].theta, w[2].theta - w[1].theta);
        // Second divided difference scaled to a symmetric stencil.
        let d2 = (w[2].lambda_hat - w[1].lambda_hat) / h2 - (w[1].lambda_hat - w[0].lambda_hat) / h1;
        let err = (w[0].stderr / h1).hypot(w[1].stderr * (1.0 / h1 + 1.0 / h2)).hypot(w[2].stderr / h2);
        let err = if err.is_finite() { err } else { 0.0 };
        if d2 < -3.0 * err - 1e-12 {
            return Err(Error::config(
                "harness.theta_window",
                format!(
                    "Lambda is not convex near theta = {}; use a smaller theta window",
                    w[1].theta
                ),
            ));
        }
    }
    Ok(eps_grid
        .iter()
        .map(|eps| {
            let (c, theta_star) = pts
                .iter()
                .map(|p| (p.theta * eps - p.lambda_hat, p.theta))
                .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
            RatePoint {
                epsilon: *eps,
                c: if *eps == 0.0 { c.max(0.0) } else { c },
                theta_star,
            }
        })
        .collect())
}

/// 95% Wilson score interval for `k` successes in `m` trials.
pub fn wilson_interval(k: usize, m: usize) -> (f64, f64) {
    let (k, m) = (k as f64, m as f64);
    let p = k / m;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / m;
    let centre = (p + z2 / (2.0 * m)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / m + z2 / (4.0 * m * m)).sqrt() / denom;
    let lo = if k == 0.0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == m { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Serialize)]
pub struct LdpPoint {
    pub n: usize,
    pub epsilon: f64,
    pub count: usize,
    pub m: usize,
    pub frequency: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// `−(1/n) log p̂`; `None` when censored (count below 30).
    pub rate: Option<f64>,
    /// `−(log p̂(n) − log p̂(n′)) / (n − n′)` against the previous horizon.
    pub incremental_rate: Option<f64>,
}

/// Empirical tail frequencies `μ̂(S_n > nε)` for each sample and ε.
/// Samples must be sorted by increasing `n`.
pub fn ldp_empirical(samples: &[BirkhoffSample], eps_grid: &[f64]) -> Vec<LdpPoint> {
    let mut out = Vec::new();
    for eps in eps_grid {
        let mut prev: Option<(usize, usize, usize)> = None;
        for s in samples {
            let threshold = s.n as f64 * eps;
            let count = s.values.iter().filter(|v| **v > threshold).count();
            let freq = count as f64 / s.m as f64;
            let (lo, hi) = wilson_interval(count, s.m);
            let ok = count >= MIN_TAIL_COUNT;
            let rate = ok.then(|| -freq.ln() / s.n as f64);
            let incremental_rate = match prev {
                Some((pn, pc, pm)) if ok && pc >= MIN_TAIL_COUNT && s.n > pn => {
                    let pf = pc as f64 / pm as f64;
                    Some(-(freq.ln() - pf.ln()) / (s.n - pn) as f64)
                }
                _ => None,
            };
            out.push(LdpPoint {
                n: s.n,
                epsilon: *eps,
                count,
                m: s.m,
                frequency: freq,
                wilson_lo: lo,
                wilson_hi: hi,
                rate,
                incremental_rate,
            });
            prev = Some((s.n, count, s.m));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct LcltRow {
    pub s: f64,
    pub frequency: f64,
    pub statistic: f64,
    pub kernel: f64,
    pub deviation: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LcltResult {
    pub n: usize,
    pub sup_deviation: f64,
    /// Monte Carlo error of the deviation at the maximizing `s`.
    pub stderr: f64,
    pub rows: Vec<LcltRow>,
}

/// `Σ√n μ̂(s + S_n ∈ J) − |J|/√(2π) e^{−s²/(2nΣ²)}` for `s = z Σ√n` over
/// `z_grid`, without the aperiodicity gate.
pub fn lclt_statistic(sample: &BirkhoffSample, sigma2: f64, j: (f64, f64), z_grid: &[f64]) -> Result<LcltResult> {
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateVariance(sigma2));
    }
    if !(j.1 > j.0) {
        return Err(Error::config("harness.interval", "J must have positive length"));
    }
    let n = sample.n as f64;
    let scale = (sigma2 * n).sqrt();
    let width = j.1 - j.0;
    let m = sample.m as f64;
    let rows: Vec<LcltRow> = z_grid
        .iter()
        .map(|z| {
            let s = z * scale;
            let hits = sample.values.iter().filter(|v| {
                let y = s + **v;
                y >= j.0 && y <= j.1
            });
            let p = hits.count() as f64 / m;
            let statistic = scale * p;
            let kernel = width / (2.0 * PI).sqrt() * (-s * s / (2.0 * n * sigma2)).exp();
            LcltRow {
                s,
                frequency: p,
                statistic,
                kernel,
                deviation: (statistic - kernel).abs(),
                stderr: scale * (p * (1.0 - p) / m).sqrt(),
            }
        })
        .collect();
    let best = rows
        .iter()
        .max_by(|a, b| a.deviation.total_cmp(&b.deviation))
        .ok_or_else(|| Error::config("harness.s_grid", "must not be empty"))?;
    Ok(LcltResult {
        n: sample.n,
        sup_deviation: best.deviation,
        stderr: best.stderr,
        rows: rows.clone(),
    })
}

/// Gated local CLT: refuses unless `aperiodicity` certified the observable.
pub fn lclt_test(
    aperiodicity: &AperiodicityReport,
    samples: &[BirkhoffSample],
    sigma2: f64,
    j: (f64, f64),
    z_grid: &[f64],
) -> Result<Vec<LcltResult>> {
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateVariance(sigma2));
    }
    if !aperiodicity.aperiodic {
        let worst = aperiodicity
            .rates
            .iter()
            .max_by(|a, b| a.rate.total_cmp(&b.rate))
            .map(|r| format!(" (rate {:.4} at t = {})", r.rate, r.t))
            .unwrap_or_default();
        return Err(Error::Refused(format!(
            "aperiodicity not certified{worst}; the observable behaves like a lattice-valued one, see the diagnose output"
        )));
    }
    samples.iter().map(|s| lclt_statistic(s, sigma2, j, z_grid)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CharFnRow {
    pub t: f64,
    pub operator_value: Complex64,
    pub mc_value: Complex64,
    pub mc_stderr: f64,
    pub gaussian: f64,
    /// Largest pairwise distance of the three values.
    pub max_deviation: f64,
}

/// `∫ L^{it/√n, n} v̂⁰ dm`, the Monte Carlo mean of `e^{itS_n/√n}` and
/// `e^{−t²Σ²/2}` for each `t`.
pub fn char_fn_check(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    density: &GridDensity,
    sample: &BirkhoffSample,
    sigma2: f64,
    t_grid: &[f64],
) -> Result<Vec<CharFnRow>> {
    let n = sample.n;
    let root = (n as f64).sqrt();
    t_grid
        .iter()
        .map(|t| {
            let theta = Complex64::new(0.0, t / root);
            let operator_value = cocycle.compose_apply(0, Some((obs, theta)), n, density)?.integral();
            let m = sample.m as f64;
            let (mut re, mut im, mut re2, mut im2) = (0.0, 0.0, 0.0, 0.0);
            for v in &sample.values {
                let (s, c) = (t * v / root).sin_cos();
                re += c;
                im += s;
                re2 += c * c;
                im2 += s * s;
            }
            let mc_value = Complex64::new(re / m, im / m);
            let var = (re2 / m - mc_value.re.powi(2)) + (im2 / m - mc_value.im.powi(2));
            let mc_stderr = (var.max(0.0) / m).sqrt();
            let gaussian = (-t * t * sigma2 / 2.0).exp();
            let g = Complex64::new(gaussian, 0.0);
            let max_deviation = (operator_value - mc_value)
                .norm()
                .max((operator_value - g).norm())
                .max((mc_value - g).norm());
            Ok(CharFnRow {
                t: *t,
                operator_value,
                mc_value,
                mc_stderr,
                gaussian,
                max_deviation,
            })
        })
        .collect()
}
