//! Equivariant densities, decay fits, twisted eigendata and the Lyapunov
//! function `Λ(θ)`, adapted-norm constants and the aperiodicity check.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::base::{stream_rng, STREAM_PROBES};
use crate::error::{Error, Result};
use crate::observable::GridObservable;
use crate::transfer::{Cocycle, GridDensity};

/// Gaps below this are treated as floating-point noise in decay fits.
pub const NOISE_FLOOR: f64 = 1e-13;
/// `|λ̂|` below this aborts the twisted pullback.
pub const DEGENERACY_THRESHOLD: f64 = 1e-10;
pub const DEFAULT_DEPTH: usize = 64;
pub const DEFAULT_THETA_MAX: f64 = 1.0;
/// Batches for the batch-means standard error of Birkhoff averages.
pub const BATCHES: usize = 16;
/// Required distance below 1 of every twisted decay rate.
pub const APERIODICITY_MARGIN: f64 = 0.02;

const RANDOM_PROBES: usize = 16;
const HAAR_BLOCK: usize = 16;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn real_integral(u: &[f64]) -> f64 {
    u.iter().sum::<f64>() / u.len() as f64
}

fn real_l1(u: &[f64]) -> f64 {
    u.iter().map(|v| v.abs()).sum::<f64>() / u.len() as f64
}

fn real_bv(u: &[f64]) -> f64 {
    let n = u.len();
    let var: f64 = (0..n).map(|i| (u[(i + 1) % n] - u[i]).abs()).sum();
    real_l1(u) + var
}

fn complex_integral(u: &[Complex64]) -> Complex64 {
    u.iter().sum::<Complex64>() / u.len() as f64
}

fn complex_l1_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

/// Least-squares line `y ≈ a + b x`; returns `(b, a)`.
pub(crate) fn ls_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (b, my - b * mx)
}

/// Mean and batch-means standard error of `xs`.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let b = batches.min(n);
    if b < 2 {
        return (mean, f64::NAN);
    }
    let size = n / b;
    let means: Vec<f64> = (0..b)
        .map(|k| xs[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mb = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - mb) * (m - mb)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

/// Probe functions for operator-norm estimates: 16 seeded random zero-mean
/// densities, then coarse Haar steps (`+1` on 8 cells, `−1` on the next 8).
/// With `with_constant` the constant function is prepended.
pub fn probe_basis(n: usize, with_constant: bool) -> Vec<Vec<f64>> {
    let mut probes = Vec::new();
    if with_constant {
        probes.push(vec![1.0; n]);
    }
    let mut rng = stream_rng(0, STREAM_PROBES);
    for _ in 0..RANDOM_PROBES {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = real_integral(&v);
        v.iter_mut().for_each(|x| *x -= m);
        probes.push(v);
    }
    for b in 0..n / HAAR_BLOCK {
        let mut v = vec![0.0; n];
        let lo = b * HAAR_BLOCK;
        v[lo..lo + HAAR_BLOCK / 2].iter_mut().for_each(|x| *x = 1.0);
        v[lo + HAAR_BLOCK / 2..lo + HAAR_BLOCK].iter_mut().for_each(|x| *x = -1.0);
        probes.push(v);
    }
    probes
}

/// Pullback of Lebesgue measure from `from` to `to`, renormalized each step.
fn pullback_real(cocycle: &Cocycle, from: i64, to: i64) -> Result<Vec<f64>> {
    let n = cocycle.resolution();
    let mut u = vec![1.0; n];
    let mut buf = vec![0.0; n];
    for f in from..to {
        cocycle.step_real(f, &mut u, &mut buf)?;
        let s = real_integral(&u);
        u.iter_mut().for_each(|x| *x /= s);
    }
    Ok(u)
}

/// Estimate of the equivariant density `v_ω⁰` at one fiber.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub density: GridDensity,
    pub depth: usize,
    /// `‖v̂(depth) − v̂(depth/2)‖₁`.
    pub convergence_delta: f64,
}

impl DensityEstimate {
    pub fn converged(&self, tolerance: f64) -> bool {
        self.convergence_delta <= tolerance
    }
}

/// `v̂_{σ^fiber ω}⁰` as the pullback of Lebesgue over `depth` fibers.
pub fn equivariant_density(cocycle: &Cocycle, fiber: i64, depth: usize) -> Result<DensityEstimate> {
    cocycle.path().require(fiber - depth as i64, fiber)?;
    let v = pullback_real(cocycle, fiber - depth as i64, fiber)?;
    let half = pullback_real(cocycle, fiber - (depth / 2) as i64, fiber)?;
    let delta = v.iter().zip(&half).map(|(a, b)| (a - b).abs()).sum::<f64>() / v.len() as f64;
    Ok(DensityEstimate {
        density: GridDensity::from_real(&v),
        depth,
        convergence_delta: delta,
    })
}

/// Equivariant densities on consecutive fibers `start..start + count`.
///
/// The first is a depth-`depth` pullback; the rest are pushed forward from it,
/// so fiber `start + k` carries pullback depth `depth + k`.
#[derive(Debug, Clone)]
pub struct EquivariantChain {
    start: i64,
    depth: usize,
    densities: Vec<Vec<f64>>,
    convergence_delta: f64,
}

impl EquivariantChain {
    pub fn build(cocycle: &Cocycle, start: i64, count: usize, depth: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Usage("equivariant chain needs at least one fiber".into()));
        }
        cocycle
            .path()
            .require(start - depth as i64, start + count as i64 - 1)?;
        let first = equivariant_density(cocycle, start, depth)?;
        let n = cocycle.resolution();
        let mut densities = Vec::with_capacity(count);
        let mut u = first.density.real_parts();
        let mut buf = vec![0.0; n];
        densities.push(u.clone());
        for k in 1..count as i64 {
            cocycle.step_real(start + k - 1, &mut u, &mut buf)?;
            let s = real_integral(&u);
            u.iter_mut().for_each(|x| *x /= s);
            densities.push(u.clone());
        }
        Ok(EquivariantChain {
            start,
            depth,
            densities,
            convergence_delta: first.convergence_delta,
        })
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    /// One past the last covered fiber.
    pub fn end(&self) -> i64 {
        self.start + self.densities.len() as i64
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn convergence_delta(&self) -> f64 {
        self.convergence_delta
    }

    pub fn values(&self, fiber: i64) -> Result<&[f64]> {
        if fiber < self.start || fiber >= self.end() {
            return Err(Error::WindowExhausted(format!(
                "equivariant densities cover fibers [{}, {}) but fiber {fiber} was requested",
                self.start,
                self.end()
            )));
        }
        Ok(&self.densities[(fiber - self.start) as usize])
    }

    pub fn density(&self, fiber: i64) -> Result<GridDensity> {
        Ok(GridDensity::from_real(self.values(fiber)?))
    }

    /// `‖L_{σ^fiber ω} v̂_fiber − v̂_{fiber+1}‖₁` with the right-hand side an
    /// independent pullback of the same depth.
    pub fn equivariance_residual(&self, cocycle: &Cocycle, fiber: i64) -> Result<f64> {
        let v = self.values(fiber)?;
        let mut pushed = vec![0.0; v.len()];
        cocycle.operator(fiber)?.apply_real(v, &mut pushed);
        let next = pullback_real(cocycle, fiber + 1 - self.depth as i64, fiber + 1)?;
        Ok(pushed.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>() / v.len() as f64)
    }
}

/// Least-squares fit of `gap(n) ≈ Z ρⁿ`.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub z_hat: f64,
    /// `0` when every gap is at the noise floor.
    pub rho_hat: f64,
    /// `gap(n)` for `n = 0..=horizon`.
    pub gaps: Vec<f64>,
    /// `log gap(n)`.
    pub residuals: Vec<f64>,
    pub horizon: usize,
    /// Symbol applied at step `n` (producing `gap(n + 1)`).
    pub symbols: Vec<usize>,
    pub note: Option<String>,
}

impl DecayFit {
    /// `(n, symbol)` for every `n` with `gap(n) > gap(n − 1)`, where `symbol`
    /// is the map applied in step `n`.
    pub fn up_spikes(&self) -> Vec<(usize, usize)> {
        (1..self.gaps.len())
            .filter(|n| self.gaps[*n] > self.gaps[n - 1] && self.gaps[*n] >= NOISE_FLOOR)
            .map(|n| (n, self.symbols[n - 1]))
            .collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.up_spikes().is_empty()
    }
}

/// Decay of `L_ωⁿ probe − (∫probe) v⁰_{σⁿω}` in sup norm relative to `‖probe‖₁`.
pub fn decay_estimate(
    cocycle: &Cocycle,
    chain: &EquivariantChain,
    fiber: i64,
    probe: &GridDensity,
    horizon: usize,
) -> Result<DecayFit> {
    let l1 = probe.l1_norm();
    if l1 == 0.0 {
        return Err(Error::Usage("decay probe has zero L1 norm".into()));
    }
    chain.values(fiber + horizon as i64)?;
    let mass = probe.integral();
    let n = cocycle.resolution();
    let mut u = probe.values().to_vec();
    let mut buf = vec![zero(); n];
    let mut gaps = Vec::with_capacity(horizon + 1);
    let mut symbols = Vec::with_capacity(horizon);
    for k in 0..=horizon as i64 {
        if k > 0 {
            cocycle.step(fiber + k - 1, None, &mut u, &mut buf)?;
            symbols.push(cocycle.symbol(fiber + k - 1)?);
        }
        let v = chain.values(fiber + k)?;
        let gap = u
            .iter()
            .zip(v)
            .map(|(a, b)| (a - mass * b).norm())
            .fold(0.0, f64::max);
        gaps.push(gap / l1);
    }
    let residuals: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = (1..=horizon)
        .filter(|k| gaps[*k] >= NOISE_FLOOR)
        .map(|k| (k as f64, residuals[k]))
        .unzip();
    if xs.len() < 2 {
        return Ok(DecayFit {
            z_hat: gaps[0],
            rho_hat: 0.0,
            gaps,
            residuals,
            horizon,
            symbols,
            note: Some("decay faster than resolvable".into()),
        });
    }
    let (slope, _) = ls_fit(&xs, &ys);
    let rho_hat = slope.exp();
    let z_hat = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x).exp())
        .fold(0.0, f64::max);
    Ok(DecayFit {
        z_hat,
        rho_hat,
        gaps,
        residuals,
        horizon,
        symbols,
        note: None,
    })
}

/// Pullback depth, number of reported fibers and analytic window for twisted
/// eigendata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenSettings {
    pub depth: usize,
    pub n_fibers: usize,
    pub theta_max: f64,
}

impl EigenSettings {
    pub fn new(depth: usize, n_fibers: usize) -> Self {
        EigenSettings {
            depth,
            n_fibers,
            theta_max: DEFAULT_THETA_MAX,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenData {
    pub theta: Complex64,
    /// `v̂_ω^θ` at fiber 0, normalized to integral 1.
    pub v_theta: GridDensity,
    /// `λ̂_{σ^jω}^θ` for `j = 0..n_fibers`.
    pub lambdas: Vec<Complex64>,
    pub pullback_depth: usize,
    /// `‖v̂^θ(depth) − v̂^θ(depth/2)‖₁`.
    pub convergence_delta: f64,
    /// `‖L_ω^θ v̂_ω^θ − λ̂_ω v̂_{σω}^θ‖₁`.
    pub equivariance_residual: f64,
}

/// Normalized twisted pullback of Lebesgue from `from` to `to`. When
/// `lambdas` is given, the normalizers `λ̂_f` of the steps are appended.
fn pullback_twisted(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    theta: Complex64,
    from: i64,
    to: i64,
    mut lambdas: Option<&mut Vec<Complex64>>,
) -> Result<Vec<Complex64>> {
    let n = cocycle.resolution();
    let mut u = vec![Complex64::new(1.0, 0.0); n];
    let mut buf = vec![zero(); n];
    for f in from..to {
        cocycle.step(f, Some((obs, theta)), &mut u, &mut buf)?;
        let lambda = complex_integral(&u);
        if !(lambda.norm() >= DEGENERACY_THRESHOLD) {
            return Err(Error::Degenerate {
                fiber: f,
                theta: format!("{theta}"),
                modulus: lambda.norm(),
            });
        }
        let inv = lambda.inv();
        u.iter_mut().for_each(|x| *x *= inv);
        if let Some(l) = lambdas.as_deref_mut() {
            l.push(lambda);
        }
    }
    Ok(u)
}

/// Twisted eigendata by sequential pullback: `u' = L^θ u`, `λ̂ = ∫u'`,
/// `u = u'/λ̂`, started from Lebesgue at fiber `−depth`.
pub fn twisted_eigendata(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    theta: Complex64,
    settings: &EigenSettings,
) -> Result<EigenData> {
    if theta.norm() > settings.theta_max {
        return Err(Error::config(
            "harness.theta",
            format!("|theta| = {} exceeds the analytic window {}", theta.norm(), settings.theta_max),
        ));
    }
    if obs.resolution() != cocycle.resolution() {
        return Err(Error::Usage("observable grid does not match the cocycle grid".into()));
    }
    let depth = settings.depth as i64;
    let n_fibers = settings.n_fibers.max(1) as i64;
    cocycle.path().require(-depth, n_fibers)?;
    let v0 = pullback_twisted(cocycle, obs, theta, -depth, 0, None)?;
    let half = pullback_twisted(cocycle, obs, theta, -depth / 2, 0, None)?;
    let mut lambdas = Vec::with_capacity(n_fibers as usize);
    let mut u = v0.clone();
    let mut buf = vec![zero(); u.len()];
    for j in 0..n_fibers {
        cocycle.step(j, Some((obs, theta)), &mut u, &mut buf)?;
        let lambda = complex_integral(&u);
        if !(lambda.norm() >= DEGENERACY_THRESHOLD) {
            return Err(Error::Degenerate {
                fiber: j,
                theta: format!("{theta}"),
                modulus: lambda.norm(),
            });
        }
        let inv = lambda.inv();
        u.iter_mut().for_each(|x| *x *= inv);
        lambdas.push(lambda);
    }
    // Independent estimate of v̂_{σω}^θ for the equivariance residual.
    let v1 = pullback_twisted(cocycle, obs, theta, 1 - depth, 1, None)?;
    let mut pushed = v0.clone();
    cocycle.step(0, Some((obs, theta)), &mut pushed, &mut buf)?;
    let scaled: Vec<Complex64> = v1.iter().map(|x| x * lambdas[0]).collect();
    let residual = complex_l1_diff(&pushed, &scaled);
    lambdas.truncate(settings.n_fibers);
    Ok(EigenData {
        theta,
        convergence_delta: complex_l1_diff(&v0, &half),
        v_theta: GridDensity::from_complex(v0),
        lambdas,
        pullback_depth: settings.depth,
        equivariance_residual: residual,
    })
}

/// `(1/n) Σ_j log|λ̂_j|` with its batch-means standard error.
pub fn birkhoff_log_average(lambdas: &[Complex64]) -> (f64, f64) {
    let logs: Vec<f64> = lambdas.iter().map(|l| l.norm().ln()).collect();
    batch_means(&logs, BATCHES)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaPoint {
    pub theta: f64,
    pub lambda_hat: f64,
    pub stderr: f64,
}

/// `Λ̂(θ)` on a grid of real twists.
pub fn lambda_curve(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    thetas: &[f64],
    settings: &EigenSettings,
) -> Result<Vec<LambdaPoint>> {
    thetas
        .par_iter()
        .map(|t| {
            let e = twisted_eigendata(cocycle, obs, Complex64::new(*t, 0.0), settings)?;
            let (lambda_hat, stderr) = birkhoff_log_average(&e.lambdas);
            Ok(LambdaPoint {
                theta: *t,
                lambda_hat,
                stderr,
            })
        })
        .collect()
}

/// Lag correlations `c[i][k] = ∫ ψ_{i+k} L^k_{σ^iω}(ψ_i v_i) dm` for source
/// fibers `first..last` and lags `k = 0..=h_max`.
pub fn lag_correlations(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    chain: &EquivariantChain,
    first: i64,
    last: i64,
    h_max: usize,
) -> Result<Vec<Vec<f64>>> {
    chain.values(first)?;
    chain.values(last - 1)?;
    let n = cocycle.resolution();
    let mut psi_cache: Vec<Vec<f64>> = Vec::new();
    let psi_start = first;
    for f in first..last + h_max as i64 {
        psi_cache.push(obs.values(f, cocycle.symbol(f)?)?);
    }
    let psi = |f: i64| &psi_cache[(f - psi_start) as usize];
    (first..last)
        .map(|i| {
            let v = chain.values(i)?;
            let mut g: Vec<f64> = psi(i).iter().zip(v).map(|(a, b)| a * b).collect();
            let mut buf = vec![0.0; n];
            let mut row = Vec::with_capacity(h_max + 1);
            for k in 0..=h_max as i64 {
                if k > 0 {
                    cocycle.step_real(i + k - 1, &mut g, &mut buf)?;
                }
                let target = psi(i + k);
                row.push(g.iter().zip(target).map(|(a, b)| a * b).sum::<f64>() / n as f64);
            }
            Ok(row)
        })
        .collect()
}

/// Central differences of `Λ̂` at 0.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteDifferences {
    pub h_fd: f64,
    /// `(Λ̂(h) − Λ̂(−h)) / 2h`.
    pub first: f64,
    /// `(Λ̂(h) − 2Λ̂(0) + Λ̂(−h)) / h²`.
    pub second: f64,
    /// Propagated batch-means errors.
    pub first_stderr: f64,
    pub second_stderr: f64,
    pub curve: Vec<LambdaPoint>,
}

pub fn lambda_fd(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    h_fd: f64,
    settings: &EigenSettings,
) -> Result<FiniteDifferences> {
    if !(h_fd > 0.0) {
        return Err(Error::config("harness.h_fd", "must be positive"));
    }
    let curve = lambda_curve(cocycle, obs, &[-h_fd, 0.0, h_fd], settings)?;
    let (m, z, p) = (curve[0], curve[1], curve[2]);
    Ok(FiniteDifferences {
        h_fd,
        first: (p.lambda_hat - m.lambda_hat) / (2.0 * h_fd),
        second: (p.lambda_hat - 2.0 * z.lambda_hat + m.lambda_hat) / (h_fd * h_fd),
        first_stderr: (p.stderr.powi(2) + m.stderr.powi(2)).sqrt() / (2.0 * h_fd),
        second_stderr: (p.stderr.powi(2) + 4.0 * z.stderr.powi(2) + m.stderr.powi(2)).sqrt()
            / (h_fd * h_fd),
        curve,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaDerivs {
    pub h_fd: f64,
    pub first: f64,
    pub second: f64,
    pub first_stderr: f64,
    pub second_stderr: f64,
    /// Birkhoff average over fibers of the backward-lag series for `λ″(0)`.
    pub series_second_deriv: f64,
    pub series_stderr: f64,
    pub curve: Vec<LambdaPoint>,
}

/// Derivatives of `Λ̂` at 0 by central differences, and the per-fiber
/// second-derivative series
/// `∫ψ_ω² v_ω + 2 Σ_{k≤h_max} ∫ ψ_ω L^k_{σ^{−k}ω}(ψ_{σ^{−k}ω} v_{σ^{−k}ω})`
/// averaged over fibers `0..n_fibers`. The chain must cover `[−h_max, n_fibers)`.
pub fn lambda_derivs(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    chain: &EquivariantChain,
    h_fd: f64,
    h_max: usize,
    settings: &EigenSettings,
) -> Result<LambdaDerivs> {
    let fd = lambda_fd(cocycle, obs, h_fd, settings)?;
    let n = settings.n_fibers as i64;
    let h = h_max as i64;
    let c = lag_correlations(cocycle, obs, chain, -h, n, h_max)?;
    let per_fiber: Vec<f64> = (0..n)
        .map(|j| {
            let row = |i: i64| &c[(i + h) as usize];
            row(j)[0] + 2.0 * (1..=h).map(|k| row(j - k)[k as usize]).sum::<f64>()
        })
        .collect();
    let (series_second_deriv, series_stderr) = batch_means(&per_fiber, BATCHES);
    Ok(LambdaDerivs {
        h_fd,
        first: fd.first,
        second: fd.second,
        first_stderr: fd.first_stderr,
        second_stderr: fd.second_stderr,
        series_second_deriv,
        series_stderr,
        curve: fd.curve,
    })
}

/// `Π(ω)φ = φ − (∫φ) v_ω⁰`.
pub fn project(v: &GridDensity, phi: &GridDensity) -> GridDensity {
    let m = phi.integral();
    GridDensity::from_complex(
        phi.values()
            .iter()
            .zip(v.values())
            .map(|(p, q)| p - m * q)
            .collect(),
    )
}

/// Default `(λ, ε)` from a fitted decay rate: `λ = −log ρ / 2`,
/// `ε = min(0.1, −log ρ / 4)`.
pub fn default_gap_parameters(rho_hat: f64) -> (f64, f64) {
    let gap = -rho_hat.ln();
    (gap / 2.0, f64::min(0.1, gap / 4.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptedNormData {
    pub lambda_gap: f64,
    pub epsilon: f64,
    pub horizon: usize,
    pub start: i64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub k: Vec<f64>,
    /// `|log K̂_j| / j` for `j ≥ 1` (index `j − 1`).
    pub temperedness: Vec<f64>,
    /// `max |log K̂_j| / j` over the second half of the window.
    pub temperedness_tail: f64,
}

/// Max over zero-mean probes of `‖L^n φ‖_BV / ‖φ‖_BV` for `n = 0..=horizon`
/// starting at `fiber`.
pub fn restricted_norms(
    cocycle: &Cocycle,
    fiber: i64,
    horizon: usize,
    probes: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let n = cocycle.resolution();
    let mut norms = vec![0.0f64; horizon + 1];
    let mut buf = vec![0.0; n];
    for p in probes {
        let base = real_bv(p);
        let mut u = p.clone();
        norms[0] = norms[0].max(1.0);
        for k in 1..=horizon {
            cocycle.step_real(fiber + k as i64 - 1, &mut u, &mut buf)?;
            norms[k] = norms[k].max(real_bv(&u) / base);
        }
    }
    Ok(norms)
}

/// Truncated adapted-norm constants on fibers `start..start + n_fibers`:
/// `D1 = (1 + ‖v_ω‖_BV) sup_{n≤H} ‖L^n|BV⁰‖ e^{λn}`,
/// `D2 = sup_{n≤H} ‖v_{σⁿω}‖_BV e^{−εn}`, `K = max(D1 + 2, D2)`.
/// The chain must cover `start..start + n_fibers + horizon`.
pub fn adapted_norm_diagnostics(
    cocycle: &Cocycle,
    chain: &EquivariantChain,
    rho_hat: f64,
    lambda_gap: f64,
    epsilon: f64,
    horizon: usize,
    start: i64,
    n_fibers: usize,
) -> Result<AdaptedNormData> {
    if horizon < 4 {
        return Err(Error::config("grid.horizon", "adapted-norm horizon must be at least 4"));
    }
    if rho_hat > 0.0 && lambda_gap >= -rho_hat.ln() {
        return Err(Error::config(
            "grid.lambda_gap",
            format!(
                "lambda = {lambda_gap} is not below the fitted gap -log(rho) = {}",
                -rho_hat.ln()
            ),
        ));
    }
    if !(lambda_gap > 0.0) || !(epsilon > 0.0) {
        return Err(Error::config("grid.epsilon", "lambda and epsilon must be positive"));
    }
    chain.values(start)?;
    chain.values(start + (n_fibers + horizon) as i64 - 1)?;
    let probes = probe_basis(cocycle.resolution(), false);
    let bv: Vec<f64> = (start..start + (n_fibers + horizon) as i64)
        .map(|f| chain.values(f).map(real_bv))
        .collect::<Result<_>>()?;
    let rows: Vec<(f64, f64)> = (0..n_fibers)
        .into_par_iter()
        .map(|j| {
            let norms = restricted_norms(cocycle, start + j as i64, horizon, &probes)?;
            let sup1 = norms
                .iter()
                .enumerate()
                .map(|(n, v)| v * (lambda_gap * n as f64).exp())
                .fold(0.0, f64::max);
            let d1 = (1.0 + bv[j]) * sup1;
            let d2 = (0..=horizon)
                .map(|n| bv[j + n] * (-epsilon * n as f64).exp())
                .fold(0.0, f64::max);
            Ok((d1, d2))
        })
        .collect::<Result<_>>()?;
    let (d1, d2): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let k: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| f64::max(a + 2.0, *b)).collect();
    let temperedness: Vec<f64> = (1..k.len()).map(|j| k[j].ln().abs() / j as f64).collect();
    let tail_from = (k.len() / 2).max(1);
    let temperedness_tail = (tail_from..k.len())
        .map(|j| temperedness[j - 1])
        .fold(0.0, f64::max);
    Ok(AdaptedNormData {
        lambda_gap,
        epsilon,
        horizon,
        start,
        d1,
        d2,
        k,
        temperedness,
        temperedness_tail,
    })
}

/// Estimated `‖L_ω^{it,n}‖_BV` over the probe basis including constants, and
/// the fitted geometric rate.
#[derive(Debug, Clone, Serialize)]
pub struct TwistedNormRate {
    pub t: f64,
    pub norms: Vec<f64>,
    pub rate: f64,
}

pub fn twisted_norm_rate(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    t: f64,
    horizon: usize,
    fiber: i64,
) -> Result<TwistedNormRate> {
    let n = cocycle.resolution();
    let probes = probe_basis(n, true);
    let theta = Complex64::new(0.0, t);
    let mut norms = vec![0.0f64; horizon + 1];
    let mut buf = vec![zero(); n];
    for p in &probes {
        let base = real_bv(p);
        let mut u: Vec<Complex64> = p.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        norms[0] = norms[0].max(1.0);
        for k in 1..=horizon {
            cocycle.step(fiber + k as i64 - 1, Some((obs, theta)), &mut u, &mut buf)?;
            norms[k] = norms[k].max(GridDensity::from_complex(u.clone()).bv_norm() / base);
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = (1..=horizon)
        .filter(|k| norms[*k] >= NOISE_FLOOR)
        .map(|k| (k as f64, norms[k].ln()))
        .unzip();
    let rate = if xs.len() < 2 { 0.0 } else { ls_fit(&xs, &ys).0.exp() };
    Ok(TwistedNormRate { t, norms, rate })
}

#[derive(Debug, Clone, Serialize)]
pub struct AperiodicityReport {
    pub rates: Vec<TwistedNormRate>,
    pub margin: f64,
    pub aperiodic: bool,
}

/// Fitted decay rates of `‖L_ω^{it,n}‖` over `t_grid` (which must exclude 0);
/// aperiodic when every rate is below `1 − margin`.
pub fn aperiodicity_check(
    cocycle: &Cocycle,
    obs: &GridObservable<'_>,
    t_grid: &[f64],
    horizon: usize,
) -> Result<AperiodicityReport> {
    if t_grid.is_empty() || t_grid.iter().any(|t| *t == 0.0 || !t.is_finite()) {
        return Err(Error::config("harness.t_grid", "must be non-empty and exclude 0"));
    }
    cocycle.path().require(0, horizon as i64 - 1)?;
    let rates: Vec<TwistedNormRate> = t_grid
        .par_iter()
        .map(|t| twisted_norm_rate(cocycle, obs, *t, horizon, 0))
        .collect::<Result<_>>()?;
    let aperiodic = rates.iter().all(|r| r.rate < 1.0 - APERIODICITY_MARGIN);
    Ok(AperiodicityReport {
        rates,
        margin: APERIODICITY_MARGIN,
        aperiodic,
    })
}
