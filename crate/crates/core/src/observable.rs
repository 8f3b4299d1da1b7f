//! Fiberwise observables `ψ_ω`.
//!
//! Each symbol carries a closed-form function. Centering and `K`-scaling add
//! a per-fiber offset `c_j` and scale `s_j`, so the working observable on
//! fiber `j` is `s_j·(ψ_{ω_j}(x) − c_j)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{CircleMap, MapFamily};
use crate::transfer::{midpoints, TwistWeight};

const BV_SAMPLES: usize = 1 << 16;

/// Closed-form observable on the circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableFn {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude·cos(2π·frequency·x)`.
    Cos {
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude·sin(2π·frequency·x)`.
    Sin {
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude·(x − 1/2)`.
    Sawtooth {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `high` on `[0, split)`, `low` on `[split, 1)`.
    IndicatorStep {
        #[serde(default = "half")]
        split: f64,
        #[serde(default = "one")]
        high: f64,
        #[serde(default = "minus_one")]
        low: f64,
    },
    /// `Σ c_k x^k`.
    Polynomial { coefficients: Vec<f64> },
    /// `φ − φ∘T_ω` with `T_ω` the map of the fiber's symbol.
    Coboundary { inner: Box<ObservableFn> },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn minus_one() -> f64 {
    -1.0
}

impl ObservableFn {
    pub fn cos() -> Self {
        ObservableFn::Cos {
            frequency: 1.0,
            amplitude: 1.0,
        }
    }

    pub fn eval(&self, x: f64, map: &CircleMap) -> f64 {
        match self {
            ObservableFn::Zero => 0.0,
            ObservableFn::Constant { value } => *value,
            ObservableFn::Cos {
                frequency,
                amplitude,
            } => amplitude * (2.0 * PI * frequency * x).cos(),
            ObservableFn::Sin {
                frequency,
                amplitude,
            } => amplitude * (2.0 * PI * frequency * x).sin(),
            ObservableFn::Sawtooth { amplitude } => amplitude * (x - 0.5),
            ObservableFn::IndicatorStep { split, high, low } => {
                if x < *split {
                    *high
                } else {
                    *low
                }
            }
            ObservableFn::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
            ObservableFn::Coboundary { inner } => inner.eval(x, map) - inner.eval(map.eval(x), map),
        }
    }

    /// Takes finitely many values on a two-point lattice, so `e^{itψ}` can be
    /// periodic in `t`.
    pub fn is_lattice_valued(&self) -> bool {
        matches!(
            self,
            ObservableFn::IndicatorStep { .. } | ObservableFn::Constant { .. } | ObservableFn::Zero
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ObservableFn::IndicatorStep { split, .. } if !(*split > 0.0 && *split < 1.0) => {
                Err(Error::config("observable.split", "must lie in (0, 1)"))
            }
            ObservableFn::Polynomial { coefficients } if coefficients.is_empty() => Err(
                Error::config("observable.coefficients", "need at least one coefficient"),
            ),
            ObservableFn::Coboundary { inner } => inner.validate(),
            _ => Ok(()),
        }
    }
}

/// Per-fiber centering offsets and scales over `start..start + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberTable {
    pub start: i64,
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
}

impl FiberTable {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn end(&self) -> i64 {
        self.start + self.offsets.len() as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    per_symbol: Vec<ObservableFn>,
    fibers: Option<FiberTable>,
}

impl Observable {
    pub fn new(per_symbol: Vec<ObservableFn>) -> Result<Self> {
        if per_symbol.is_empty() {
            return Err(Error::config("observable", "no functions given"));
        }
        for f in &per_symbol {
            f.validate()?;
        }
        Ok(Observable {
            per_symbol,
            fibers: None,
        })
    }

    /// The same function on every symbol.
    pub fn uniform(f: ObservableFn, alphabet_size: usize) -> Result<Self> {
        Self::new(vec![f; alphabet_size])
    }

    pub fn function(&self, symbol: usize) -> &ObservableFn {
        &self.per_symbol[symbol.min(self.per_symbol.len() - 1)]
    }

    pub fn alphabet_size(&self) -> usize {
        self.per_symbol.len()
    }

    pub fn fibers(&self) -> Option<&FiberTable> {
        self.fibers.as_ref()
    }

    pub fn with_fibers(&self, table: FiberTable) -> Self {
        Observable {
            per_symbol: self.per_symbol.clone(),
            fibers: Some(table),
        }
    }

    /// `a·ψ` on the fibers of the existing table.
    pub fn rescaled(&self, a: f64) -> Result<Self> {
        let t = self
            .fibers
            .as_ref()
            .ok_or_else(|| Error::Usage("rescaling needs a per-fiber table; center first".into()))?;
        Ok(self.with_fibers(FiberTable {
            start: t.start,
            offsets: t.offsets.clone(),
            scales: t.scales.iter().map(|s| s * a).collect(),
        }))
    }

    pub fn is_lattice_valued(&self) -> bool {
        self.per_symbol.iter().all(|f| f.is_lattice_valued())
    }

    /// `(offset, scale)` at `fiber`.
    pub fn fiber_params(&self, fiber: i64) -> Result<(f64, f64)> {
        match &self.fibers {
            None => Ok((0.0, 1.0)),
            Some(t) => {
                if fiber < t.start || fiber >= t.end() {
                    Err(Error::WindowExhausted(format!(
                        "observable is centered on fibers [{}, {}) but fiber {fiber} was requested",
                        t.start,
                        t.end()
                    )))
                } else {
                    let k = (fiber - t.start) as usize;
                    Ok((t.offsets[k], t.scales[k]))
                }
            }
        }
    }

    /// Working observable on `fiber` (symbol `symbol`, map `map`) at `x`.
    pub fn eval(&self, fiber: i64, symbol: usize, map: &CircleMap, x: f64) -> Result<f64> {
        let (c, s) = self.fiber_params(fiber)?;
        Ok(s * (self.function(symbol).eval(x, map) - c))
    }

    /// BV norm `‖ψ_i‖₁ + var(ψ_i)` of the raw per-symbol function, by sampling
    /// on a fine uniform grid of the circle.
    pub fn raw_bv_norm(&self, symbol: usize, map: &CircleMap) -> f64 {
        let f = self.function(symbol);
        let n = BV_SAMPLES;
        let vals: Vec<f64> = (0..n)
            .map(|i| f.eval((i as f64 + 0.5) / n as f64, map))
            .collect();
        let l1 = vals.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        let var: f64 = (0..n).map(|i| (vals[(i + 1) % n] - vals[i]).abs()).sum();
        l1 + var
    }
}

/// Midpoint values of an observable on a grid of resolution `n`, cached per
/// symbol. Twist weights are rebuilt per fiber from these tables.
#[derive(Debug, Clone)]
pub struct GridObservable<'a> {
    obs: &'a Observable,
    tables: Vec<Vec<f64>>,
    resolution: usize,
}

impl<'a> GridObservable<'a> {
    pub fn new(obs: &'a Observable, family: &MapFamily, resolution: usize) -> Self {
        let mids = midpoints(resolution);
        let tables = (0..family.len())
            .map(|s| {
                let map = family.get(s);
                let f = obs.function(s);
                mids.iter().map(|x| f.eval(*x, map)).collect()
            })
            .collect();
        GridObservable {
            obs,
            tables,
            resolution,
        }
    }

    pub fn observable(&self) -> &Observable {
        self.obs
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Raw midpoint table of `symbol` (no centering).
    pub fn raw(&self, symbol: usize) -> &[f64] {
        &self.tables[symbol]
    }

    /// Working midpoint values `s_j (ψ(m_i) − c_j)` on `fiber`.
    pub fn values(&self, fiber: i64, symbol: usize) -> Result<Vec<f64>> {
        let (c, s) = self.obs.fiber_params(fiber)?;
        Ok(self.tables[symbol].iter().map(|v| s * (v - c)).collect())
    }

    /// `e^{θ ψ}` on the midpoints of `fiber`.
    pub fn twist(&self, fiber: i64, symbol: usize, theta: Complex64) -> Result<TwistWeight> {
        let (c, s) = self.obs.fiber_params(fiber)?;
        let ts = theta * s;
        let values = self.tables[symbol]
            .iter()
            .map(|v| (ts * (v - c)).exp())
            .collect();
        Ok(TwistWeight::from_values(theta, values))
    }
}
