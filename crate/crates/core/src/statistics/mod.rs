//! Observables on the cocycle, Birkhoff-sum Monte Carlo, variance estimators
//! and the CLT / LDP / LCLT harnesses.

mod harness;
mod variance;

pub use harness::*;
pub use variance::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::base::{mix_seed, STREAM_MONTE_CARLO};
use crate::error::{Error, Result};
use crate::maps::wrap;
use crate::observable::{FiberTable, GridObservable, Observable};
use crate::spectral::{AdaptedNormData, EquivariantChain};
use crate::transfer::{Cocycle, GridDensity};

/// `2^-53`, one unit in the last place at 1.
const ULP: f64 = 1.0 / 9_007_199_254_740_992.0;

/// Observable centered against the equivariant densities.
#[derive(Debug, Clone)]
pub struct Centered {
    pub observable: Observable,
    /// `max_j |∫ ψ_j v̂_j dm|` after centering.
    pub residual: f64,
}

/// `∫ ψ_j v̂_j dm` by midpoint quadrature of the working observable.
fn grid_mean(values: &[f64], v: &[f64]) -> f64 {
    values.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / v.len() as f64
}

/// Centers `obs` on fibers `first..last`: the new offset is chosen so that
/// `∫ s_j (ψ_j − c_j) v̂_j dm = 0` by grid quadrature. Existing offsets and
/// scales are kept as the starting point, so centering is idempotent.
pub fn center(
    obs: &Observable,
    cocycle: &Cocycle,
    chain: &EquivariantChain,
    first: i64,
    last: i64,
) -> Result<Centered> {
    if last <= first {
        return Err(Error::Usage("empty fiber range for centering".into()));
    }
    let grid = GridObservable::new(obs, cocycle.family(), cocycle.resolution());
    let mut offsets = Vec::with_capacity((last - first) as usize);
    let mut scales = Vec::with_capacity(offsets.capacity());
    for f in first..last {
        let (c, s) = obs.fiber_params(f)?;
        let v = chain.values(f)?;
        let raw = grid.raw(cocycle.symbol(f)?);
        let mean = grid_mean(raw, v) - c;
        offsets.push(c + mean);
        scales.push(s);
    }
    let centered = obs.with_fibers(FiberTable {
        start: first,
        offsets,
        scales,
    });
    let grid = GridObservable::new(&centered, cocycle.family(), cocycle.resolution());
    let mut residual: f64 = 0.0;
    for f in first..last {
        let vals = grid.values(f, cocycle.symbol(f)?)?;
        residual = residual.max(grid_mean(&vals, chain.values(f)?).abs());
    }
    Ok(Centered {
        observable: centered,
        residual,
    })
}

/// `ψ_K = ψ / K̂²` fiberwise.
#[derive(Debug, Clone)]
pub struct Scaled {
    pub observable: Observable,
    /// `sup_j K̂_j² ‖ψ_K‖_BV`, which reproduces `sup_j ‖ψ_j‖_BV`.
    pub condition_sup: f64,
}

/// Divides the working observable on each fiber of `adapted` by `K̂_j²`.
/// Offsets are kept; `obs` must carry a fiber table covering those fibers
/// (or none, meaning zero offsets).
pub fn scale_by_k(obs: &Observable, cocycle: &Cocycle, adapted: &AdaptedNormData) -> Result<Scaled> {
    if adapted.k.iter().any(|k| !(*k >= 1.0)) {
        return Err(Error::Usage("K_hat must be at least 1 on every fiber".into()));
    }
    let n = cocycle.resolution();
    let grid = GridObservable::new(obs, cocycle.family(), n);
    let variations: Vec<f64> = (0..cocycle.family().len())
        .map(|s| {
            let map = cocycle.family().get(s);
            let f = obs.function(s);
            let l1 = (0..4096)
                .map(|i| f.eval((i as f64 + 0.5) / 4096.0, map).abs())
                .sum::<f64>()
                / 4096.0;
            obs.raw_bv_norm(s, map) - l1
        })
        .collect();
    let mut offsets = Vec::with_capacity(adapted.k.len());
    let mut scales = Vec::with_capacity(adapted.k.len());
    let mut condition_sup: f64 = 0.0;
    for (j, k) in adapted.k.iter().enumerate() {
        let f = adapted.start + j as i64;
        let (c, s) = obs.fiber_params(f)?;
        let sym = cocycle.symbol(f)?;
        let scaled = s / (k * k);
        let l1 = grid.raw(sym).iter().map(|v| (v - c).abs()).sum::<f64>() / n as f64;
        let bv_k = scaled.abs() * (l1 + variations[sym]);
        condition_sup = condition_sup.max(k * k * bv_k);
        offsets.push(c);
        scales.push(scaled);
    }
    Ok(Scaled {
        observable: obs.with_fibers(FiberTable {
            start: adapted.start,
            offsets,
            scales,
        }),
        condition_sup,
    })
}

/// Birkhoff sums `S_nψ(ω, x_m)` of one horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirkhoffSample {
    pub n: usize,
    pub m: usize,
    pub values: Vec<f64>,
    pub sampling_seed: u64,
}

impl BirkhoffSample {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.m as f64
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Inverse CDF of a nonnegative grid density; maps a uniform `u` to a point
/// of the circle, linearly within the selected cell.
#[derive(Debug, Clone)]
pub struct GridSampler {
    cdf: Vec<f64>,
}

impl GridSampler {
    pub fn new(density: &GridDensity) -> Result<Self> {
        let mut acc = 0.0;
        let mut cdf = Vec::with_capacity(density.resolution());
        for v in density.values() {
            if v.re < 0.0 || !v.re.is_finite() {
                return Err(Error::Numeric("sampling density has negative or non-finite mass".into()));
            }
            acc += v.re;
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::Numeric("sampling density has zero mass".into()));
        }
        Ok(GridSampler { cdf })
    }

    pub fn sample(&self, u: f64) -> f64 {
        let n = self.cdf.len();
        let total = self.cdf[n - 1];
        let target = u * total;
        let cell = self.cdf.partition_point(|c| *c <= target).min(n - 1);
        let below = if cell == 0 { 0.0 } else { self.cdf[cell - 1] };
        let mass = self.cdf[cell] - below;
        let frac = if mass > 0.0 { ((target - below) / mass).clamp(0.0, 1.0) } else { 0.5 };
        wrap((cell as f64 + frac) / n as f64)
    }
}

/// Seed of sample `index` under master `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    mix_seed(mix_seed(seed, STREAM_MONTE_CARLO), index)
}

/// Partial sums of one trajectory at every horizon in `horizons` (sorted).
///
/// After each step the image is perturbed by a uniform offset of size
/// `|T'(x)|·2⁻⁵³`, refreshing the low-order bits that exact expanding maps
/// shift out of a double.
pub fn trajectory_sums(
    cocycle: &Cocycle,
    obs: &Observable,
    x0: f64,
    horizons: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(horizons.len());
    let mut sum = CompensatedSum::default();
    let mut x = x0;
    let mut next = 0;
    let last = horizons.last().copied().unwrap_or(0);
    for k in 0..=last {
        while next < horizons.len() && horizons[next] == k {
            out.push(sum.value());
            next += 1;
        }
        if k == last {
            break;
        }
        let f = k as i64;
        let sym = cocycle.symbol(f)?;
        let map = cocycle.family().get(sym);
        sum.add(obs.eval(f, sym, map, x)?);
        let slope = map.derivative(x).abs();
        let y = map.eval(x);
        x = wrap(y + (rng.gen::<f64>() - 0.5) * slope * ULP);
    }
    Ok(out)
}

/// Birkhoff sums at several horizons from shared trajectories started under
/// `v̂_ω⁰`. Sample `m` uses its own seeded stream, so results do not depend
/// on scheduling.
pub fn birkhoff_samples(
    cocycle: &Cocycle,
    obs: &Observable,
    density: &GridDensity,
    horizons: &[usize],
    m: usize,
    seed: u64,
) -> Result<Vec<BirkhoffSample>> {
    if horizons.is_empty() || m == 0 {
        return Err(Error::Usage("need at least one horizon and one sample".into()));
    }
    let mut hs = horizons.to_vec();
    hs.sort_unstable();
    hs.dedup();
    let last = *hs.last().expect("non-empty");
    if last > 0 {
        cocycle.path().require(0, last as i64 - 1)?;
        obs.fiber_params(0)?;
        obs.fiber_params(last as i64 - 1)?;
    }
    let sampler = GridSampler::new(density)?;
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, i as u64));
            let x0 = sampler.sample(rng.gen::<f64>());
            trajectory_sums(cocycle, obs, x0, &hs, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(horizons
        .iter()
        .map(|h| {
            let k = hs.binary_search(h).expect("horizon present");
            BirkhoffSample {
                n: *h,
                m,
                values: rows.iter().map(|r| r[k]).collect(),
                sampling_seed: seed,
            }
        })
        .collect())
}

pub fn birkhoff_sample(
    cocycle: &Cocycle,
    obs: &Observable,
    density: &GridDensity,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<BirkhoffSample> {
    Ok(birkhoff_samples(cocycle, obs, density, &[n], m, seed)?.remove(0))
}
