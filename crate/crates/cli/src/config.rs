//! Scenario files: one JSON document per experiment.

use std::path::Path;

use quenched::{
    BaseMode, BaseSystem, CircleMap, Error, MapFamily, Observable, ObservableFn, PiecewiseLinearMap,
    SmoothCircleMap,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub base: BaseConfig,
    pub maps: Vec<MapConfig>,
    pub grid: GridConfig,
    pub observable: ObservableConfig,
    #[serde(default)]
    pub harness: HarnessConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    pub alphabet_size: usize,
    pub mode: BaseMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transition: Vec<Vec<f64>>,
    pub master_seed: u64,
}

/// One member of the map family, indexed by its position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapConfig {
    /// `x ↦ kx mod 1`.
    Multiply { factor: u32 },
    /// `x ↦ ax` for `0 < a ≤ 1`.
    Scale { factor: f64 },
    PiecewiseLinear {
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
        offsets: Vec<f64>,
    },
    /// `x ↦ dx + (ε/2π) sin(2πx) + phase mod 1`.
    Smooth {
        degree: u32,
        epsilon: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl MapConfig {
    pub fn build(&self) -> quenched::Result<CircleMap> {
        Ok(match self {
            MapConfig::Multiply { factor } => CircleMap::PiecewiseLinear(PiecewiseLinearMap::multiply_mod1(*factor)?),
            MapConfig::Scale { factor } => CircleMap::PiecewiseLinear(PiecewiseLinearMap::scale(*factor)?),
            MapConfig::PiecewiseLinear {
                breakpoints,
                slopes,
                offsets,
            } => CircleMap::PiecewiseLinear(PiecewiseLinearMap::new(
                breakpoints.clone(),
                slopes.clone(),
                offsets.clone(),
            )?),
            MapConfig::Smooth {
                degree,
                epsilon,
                phase,
            } => CircleMap::SmoothCircle(SmoothCircleMap::new(*degree, *epsilon, *phase)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: usize,
    #[serde(default = "defaults::depth")]
    pub depth: usize,
    /// Steps of the correlation-decay fit.
    #[serde(default = "defaults::decay_horizon")]
    pub decay_horizon: usize,
    /// Truncation lag of the variance series.
    #[serde(default = "defaults::h_max")]
    pub h_max: usize,
    /// Fibers averaged by the Lyapunov and variance estimators.
    #[serde(default = "defaults::n_fibers")]
    pub n_fibers: usize,
    /// Horizon of the truncated adapted-norm suprema.
    #[serde(default = "defaults::adapted_horizon")]
    pub adapted_horizon: usize,
    #[serde(default = "defaults::theta_max")]
    pub theta_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    #[default]
    None,
    /// Divide fiber `j` by `K̂_j²`.
    K2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    /// Same function on every symbol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<ObservableFn>,
    /// One function per symbol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_symbol: Option<Vec<ObservableFn>>,
    #[serde(default = "defaults::yes")]
    pub center: bool,
    #[serde(default)]
    pub scaling: Scaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sigma2Source {
    #[default]
    Series,
    Fd,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub clt: bool,
    pub ldp: bool,
    pub lclt: bool,
    pub charfn: bool,
    /// Monte Carlo trajectories per horizon.
    pub samples: usize,
    pub n_variance: usize,
    pub n_clt: usize,
    pub ks_threshold: f64,
    /// Variance used by the limit-theorem harnesses.
    pub sigma2_source: Sigma2Source,
    /// Overrides `sigma2_source` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    pub h_fd: f64,
    pub theta_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub ldp_n: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ldp_samples: Option<usize>,
    pub lclt_n: Vec<usize>,
    pub lclt_interval: [f64; 2],
    pub lclt_z_grid: Vec<f64>,
    pub aperiodicity_t: Vec<f64>,
    pub aperiodicity_horizon: usize,
    pub charfn_n: usize,
    pub charfn_t: Vec<f64>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            clt: false,
            ldp: false,
            lclt: false,
            charfn: false,
            samples: 100_000,
            n_variance: 2000,
            n_clt: 2000,
            ks_threshold: 0.02,
            sigma2_source: Sigma2Source::Series,
            sigma2: None,
            h_fd: 0.05,
            theta_grid: linspace(-1.0, 1.0, 41),
            eps_grid: linspace(0.0, 0.4, 9),
            ldp_n: vec![100, 200],
            ldp_samples: None,
            lclt_n: vec![400, 1600],
            lclt_interval: [-0.5, 0.5],
            lclt_z_grid: linspace(-2.0, 2.0, 17),
            aperiodicity_t: vec![0.5, 1.0, 2.0, 3.0],
            aperiodicity_horizon: 20,
            charfn_n: 1024,
            charfn_t: vec![0.5, 1.0],
        }
    }
}

/// `count` evenly spaced points from `lo` to `hi`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
        .collect()
}

mod defaults {
    pub fn depth() -> usize {
        64
    }
    pub fn decay_horizon() -> usize {
        40
    }
    pub fn h_max() -> usize {
        30
    }
    pub fn n_fibers() -> usize {
        2000
    }
    pub fn adapted_horizon() -> usize {
        16
    }
    pub fn theta_max() -> f64 {
        1.0
    }
    pub fn yes() -> bool {
        true
    }
}

/// Validated scenario ready for the pipeline.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ExperimentConfig,
    pub base: BaseSystem,
    pub family: MapFamily,
    pub observable: Observable,
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Re-labels a map constructor error with the index of the map.
fn indexed(e: Error, i: usize) -> CliError {
    match e {
        Error::Config { field, message } => {
            let field = match field.strip_prefix("maps") {
                Some(rest) => format!("maps[{i}]{rest}"),
                None => field,
            };
            CliError::Validation { field, message }
        }
        other => CliError::from(other),
    }
}

fn check_positive(field: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be strictly positive, got {x}")))
    }
}

fn check_horizons(field: &str, ns: &[usize]) -> Result<(), CliError> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(invalid(field, "must be a non-empty list of positive horizons"));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(field, "must be strictly increasing"));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses a scenario document. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks every field; the error names the first violation.
    pub fn validate(&self) -> Result<Scenario, CliError> {
        let b = &self.base;
        let base = BaseSystem {
            alphabet_size: b.alphabet_size,
            mode: b.mode,
            weights: b.weights.clone(),
            transition: b.transition.clone(),
            master_seed: b.master_seed,
        };
        base.validate()?;
        if self.maps.len() != b.alphabet_size {
            return Err(invalid(
                "maps",
                format!("{} maps for an alphabet of size {}", self.maps.len(), b.alphabet_size),
            ));
        }
        let maps = self
            .maps
            .iter()
            .enumerate()
            .map(|(i, m)| m.build().map_err(|e| indexed(e, i)))
            .collect::<Result<Vec<_>, _>>()?;
        let family = MapFamily::new(maps)?;

        let g = &self.grid;
        if g.resolution < 8 || !g.resolution.is_power_of_two() {
            return Err(invalid("grid.resolution", "must be a power of two, at least 8"));
        }
        if g.depth < 2 {
            return Err(invalid("grid.depth", "must be at least 2"));
        }
        if g.decay_horizon < 2 {
            return Err(invalid("grid.decay_horizon", "must be at least 2"));
        }
        if g.n_fibers == 0 {
            return Err(invalid("grid.n_fibers", "must be positive"));
        }
        if g.adapted_horizon < 4 {
            return Err(invalid("grid.adapted_horizon", "must be at least 4"));
        }
        check_positive("grid.theta_max", g.theta_max)?;

        let o = &self.observable;
        let functions = match (&o.function, &o.per_symbol) {
            (Some(f), None) => vec![f.clone(); b.alphabet_size],
            (None, Some(fs)) => {
                if fs.len() != b.alphabet_size {
                    return Err(invalid(
                        "observable.per_symbol",
                        format!("{} functions for an alphabet of size {}", fs.len(), b.alphabet_size),
                    ));
                }
                fs.clone()
            }
            _ => return Err(invalid("observable", "give exactly one of `function` or `per_symbol`")),
        };
        for f in &functions {
            f.validate()?;
        }
        let observable = Observable::new(functions)?;

        let h = &self.harness;
        if h.samples == 0 {
            return Err(invalid("harness.samples", "must be positive"));
        }
        if h.n_variance == 0 {
            return Err(invalid("harness.n_variance", "must be positive"));
        }
        if h.n_clt == 0 {
            return Err(invalid("harness.n_clt", "must be positive"));
        }
        check_positive("harness.ks_threshold", h.ks_threshold)?;
        if let Some(s) = h.sigma2 {
            check_positive("harness.sigma2", s)?;
        }
        check_positive("harness.h_fd", h.h_fd)?;
        if h.h_fd > g.theta_max {
            return Err(invalid("harness.h_fd", "must not exceed grid.theta_max"));
        }
        if h.theta_grid.len() < 3 {
            return Err(invalid("harness.theta_grid", "need at least three points"));
        }
        if h.theta_grid.iter().any(|t| !(t.abs() <= g.theta_max)) {
            return Err(invalid("harness.theta_grid", "points must lie within grid.theta_max"));
        }
        if h.eps_grid.is_empty() || h.eps_grid.iter().any(|e| !(*e >= 0.0)) {
            return Err(invalid("harness.eps_grid", "must be a non-empty list of nonnegative values"));
        }
        check_horizons("harness.ldp_n", &h.ldp_n)?;
        if h.ldp_samples == Some(0) {
            return Err(invalid("harness.ldp_samples", "must be positive"));
        }
        check_horizons("harness.lclt_n", &h.lclt_n)?;
        if !(h.lclt_interval[1] > h.lclt_interval[0]) {
            return Err(invalid("harness.lclt_interval", "must have positive length"));
        }
        if h.lclt_z_grid.is_empty() {
            return Err(invalid("harness.lclt_z_grid", "must not be empty"));
        }
        if h.aperiodicity_t.is_empty() || h.aperiodicity_t.contains(&0.0) {
            return Err(invalid("harness.aperiodicity_t", "must be non-empty and exclude 0"));
        }
        if h.aperiodicity_horizon < 2 {
            return Err(invalid("harness.aperiodicity_horizon", "must be at least 2"));
        }
        if h.charfn_n == 0 {
            return Err(invalid("harness.charfn_n", "must be positive"));
        }
        if h.charfn_t.is_empty() {
            return Err(invalid("harness.charfn_t", "must not be empty"));
        }
        Ok(Scenario {
            config: self.clone(),
            base,
            family,
            observable,
        })
    }
}
