//! Quenched realizations of the driving system.
//!
//! The base system is a full shift (iid symbols) or a stationary Markov
//! shift over a finite alphabet of maps. A realization `ω` is a finite
//! two-sided window of symbols; `σ^k ω` is obtained by moving the origin.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stream tag for forward symbols `k >= 0`.
pub const STREAM_FORWARD: u64 = 0x01;
/// Stream tag for backward symbols `k < 0`.
pub const STREAM_BACKWARD: u64 = 0x02;
/// Stream tag for probe densities used by the norm estimators.
pub const STREAM_PROBES: u64 = 0x03;
/// Stream tag for Monte Carlo initial conditions and refresh bits.
pub const STREAM_MONTE_CARLO: u64 = 0x10;

const SUM_TOLERANCE: f64 = 1e-12;

/// Derives an independent 64-bit seed for `tag` from `master`.
///
/// SplitMix64 finalizer applied to `master ^ (tag * φ64)`, where `φ64` is
/// the 64-bit golden-ratio constant. Streams derived with distinct tags are
/// statistically independent and can be consumed in any order.
pub fn mix_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded generator for the stream `tag` of `master`.
pub fn stream_rng(master: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(master, tag))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseMode {
    Iid,
    Markov,
}

/// Law of the symbol sequence driving the cocycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSystem {
    pub alphabet_size: usize,
    pub mode: BaseMode,
    /// Symbol probabilities (iid mode).
    pub weights: Vec<f64>,
    /// Row-stochastic transition matrix, row-major (markov mode).
    pub transition: Vec<Vec<f64>>,
    pub master_seed: u64,
}

impl BaseSystem {
    pub fn iid(weights: Vec<f64>, master_seed: u64) -> Result<Self> {
        let sys = BaseSystem {
            alphabet_size: weights.len(),
            mode: BaseMode::Iid,
            weights,
            transition: Vec::new(),
            master_seed,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn markov(transition: Vec<Vec<f64>>, master_seed: u64) -> Result<Self> {
        let sys = BaseSystem {
            alphabet_size: transition.len(),
            mode: BaseMode::Markov,
            weights: Vec::new(),
            transition,
            master_seed,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// A single map applied at every time.
    pub fn deterministic(master_seed: u64) -> Self {
        BaseSystem {
            alphabet_size: 1,
            mode: BaseMode::Iid,
            weights: vec![1.0],
            transition: Vec::new(),
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size == 0 {
            return Err(Error::config("base.alphabet_size", "must be positive"));
        }
        match self.mode {
            BaseMode::Iid => {
                check_probability_vector(&self.weights, self.alphabet_size, "base.weights")?;
            }
            BaseMode::Markov => {
                if self.transition.len() != self.alphabet_size {
                    return Err(Error::config(
                        "base.transition",
                        format!(
                            "expected {} rows, found {}",
                            self.alphabet_size,
                            self.transition.len()
                        ),
                    ));
                }
                for (i, row) in self.transition.iter().enumerate() {
                    check_probability_vector(row, self.alphabet_size, &format!("base.transition[{i}]"))?;
                }
                if !is_irreducible(&self.transition) {
                    return Err(Error::config(
                        "base.transition",
                        "transition matrix is not irreducible; the shift would not be ergodic",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Stationary law of the symbol process.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        match self.mode {
            BaseMode::Iid => Ok(self.weights.clone()),
            BaseMode::Markov => stationary_vector(&self.transition),
        }
    }

    /// Time-reversed transition matrix with respect to the stationary law.
    fn reversed_transition(&self, pi: &[f64]) -> Vec<Vec<f64>> {
        let k = self.alphabet_size;
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        if pi[i] > 0.0 {
                            pi[j] * self.transition[j][i] / pi[i]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

fn check_probability_vector(v: &[f64], len: usize, field: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::config(
            field,
            format!("expected {len} entries, found {}", v.len()),
        ));
    }
    if let Some(bad) = v.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::config(field, format!("entry {bad} is not a probability")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::config(field, format!("entries sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Reachability closure of the support graph.
pub fn is_irreducible(transition: &[Vec<f64>]) -> bool {
    let k = transition.len();
    let mut reach: Vec<Vec<bool>> = transition
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, p)| *p > 0.0 || i == j).collect())
        .collect();
    for m in 0..k {
        for i in 0..k {
            if reach[i][m] {
                for j in 0..k {
                    if reach[m][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|r| *r))
}

/// Solves `π P = π`, `Σ π = 1` by Gaussian elimination with partial pivoting.
pub fn stationary_vector(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = transition.len();
    // Rows 0..k-1 of (P^T - I) plus the normalization row.
    let mut a = vec![vec![0.0; k + 1]; k];
    for i in 0..k - 1 {
        for j in 0..k {
            a[i][j] = transition[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..k {
        a[k - 1][j] = 1.0;
    }
    a[k - 1][k] = 1.0;
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Numeric("singular system for the stationary law".into()));
        }
        a.swap(col, pivot);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=k {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let mut pi: Vec<f64> = (0..k).map(|i| (a[i][k] / a[i][i]).max(0.0)).collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= s);
    Ok(pi)
}

/// A realized two-sided window `ω_{-n_back}, …, ω_{n_fwd}` with origin at `ω_0`.
///
/// Cloning and shifting share the underlying symbol buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OmegaPath {
    symbols: Arc<[u32]>,
    origin: usize,
    alphabet_size: usize,
}

impl OmegaPath {
    /// Builds a path from explicit symbols; `symbols[n_back]` becomes index 0.
    pub fn from_symbols(symbols: Vec<u32>, n_back: usize, alphabet_size: usize) -> Result<Self> {
        if n_back >= symbols.len() {
            return Err(Error::Usage(format!(
                "origin {n_back} outside a window of {} symbols",
                symbols.len()
            )));
        }
        if let Some(s) = symbols.iter().find(|s| **s as usize >= alphabet_size) {
            return Err(Error::Usage(format!(
                "symbol {s} outside alphabet of size {alphabet_size}"
            )));
        }
        Ok(OmegaPath {
            symbols: symbols.into(),
            origin: n_back,
            alphabet_size,
        })
    }

    pub fn n_back(&self) -> usize {
        self.origin
    }

    pub fn n_fwd(&self) -> usize {
        self.symbols.len() - 1 - self.origin
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn get(&self, k: i64) -> Option<usize> {
        let idx = self.origin as i64 + k;
        if idx < 0 || idx >= self.symbols.len() as i64 {
            None
        } else {
            Some(self.symbols[idx as usize] as usize)
        }
    }

    /// Symbol of `σ^k ω`.
    pub fn symbol_at(&self, k: i64) -> Result<usize> {
        self.get(k).ok_or_else(|| {
            Error::WindowExhausted(format!(
                "fiber {k} outside realized window [-{}, {}]",
                self.n_back(),
                self.n_fwd()
            ))
        })
    }

    /// Checks that fibers `lo..=hi` are realized.
    pub fn require(&self, lo: i64, hi: i64) -> Result<()> {
        self.symbol_at(lo)?;
        self.symbol_at(hi)?;
        Ok(())
    }

    /// The realization `σ^k ω`.
    pub fn shift(&self, k: i64) -> Result<OmegaPath> {
        if k < -(self.n_back() as i64) || k > self.n_fwd() as i64 {
            return Err(Error::WindowExhausted(format!(
                "shift by {k} leaves realized window [-{}, {}]",
                self.n_back(),
                self.n_fwd()
            )));
        }
        Ok(OmegaPath {
            symbols: Arc::clone(&self.symbols),
            origin: (self.origin as i64 + k) as usize,
            alphabet_size: self.alphabet_size,
        })
    }

    /// Symbols of fibers `lo..=hi`.
    pub fn window(&self, lo: i64, hi: i64) -> Result<&[u32]> {
        self.require(lo, hi)?;
        let a = (self.origin as i64 + lo) as usize;
        let b = (self.origin as i64 + hi) as usize;
        Ok(&self.symbols[a..=b])
    }
}

/// Draws a realization with `n_back` past and `n_fwd` future symbols.
///
/// Forward and backward halves come from independent streams, so enlarging
/// one side of the window never changes the other.
pub fn sample_path(sys: &BaseSystem, n_back: usize, n_fwd: usize) -> Result<OmegaPath> {
    sys.validate()?;
    let k = sys.alphabet_size;
    let mut fwd = Vec::with_capacity(n_fwd + 1);
    let mut back = Vec::with_capacity(n_back);
    let mut rng_f = stream_rng(sys.master_seed, STREAM_FORWARD);
    let mut rng_b = stream_rng(sys.master_seed, STREAM_BACKWARD);

    if k == 1 {
        fwd.resize(n_fwd + 1, 0u32);
        back.resize(n_back, 0u32);
    } else {
        match sys.mode {
            BaseMode::Iid => {
                let dist = weighted(&sys.weights)?;
                fwd.extend((0..=n_fwd).map(|_| dist.sample(&mut rng_f) as u32));
                back.extend((0..n_back).map(|_| dist.sample(&mut rng_b) as u32));
            }
            BaseMode::Markov => {
                let pi = sys.stationary()?;
                let forward_rows = sys
                    .transition
                    .iter()
                    .map(|r| weighted(r))
                    .collect::<Result<Vec<_>>>()?;
                let reversed = sys.reversed_transition(&pi);
                let backward_rows = reversed
                    .iter()
                    .map(|r| weighted(r))
                    .collect::<Result<Vec<_>>>()?;
                let mut state = weighted(&pi)?.sample(&mut rng_f);
                fwd.push(state as u32);
                for _ in 0..n_fwd {
                    state = forward_rows[state].sample(&mut rng_f);
                    fwd.push(state as u32);
                }
                let mut state = fwd[0] as usize;
                for _ in 0..n_back {
                    state = backward_rows[state].sample(&mut rng_b);
                    back.push(state as u32);
                }
            }
        }
    }

    let mut symbols: Vec<u32> = back.into_iter().rev().collect();
    symbols.extend(fwd);
    OmegaPath::from_symbols(symbols, n_back, k)
}

fn weighted(w: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(w).map_err(|e| Error::config("base.weights", e.to_string()))
}
