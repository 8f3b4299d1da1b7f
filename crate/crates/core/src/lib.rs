//! Quenched limit theorems for random expanding circle maps.
//!
//! A stationary base sequence `ω` selects a map `T_{ω_k}` at each step. This
//! crate discretizes the transfer operators of the resulting cocycle on a
//! uniform grid, computes equivariant densities and twisted eigendata, and
//! compares the predicted Lyapunov function, variance and rate function with
//! Monte Carlo Birkhoff sums.

pub mod base;
pub mod error;
pub mod maps;
pub mod observable;
pub mod spectral;
pub mod statistics;
pub mod transfer;

pub use base::{sample_path, stream_rng, BaseMode, BaseSystem, OmegaPath};
pub use error::{Error, Result};
pub use maps::{CircleMap, LyConstants, MapFamily, PiecewiseLinearMap, ScenarioReport, SmoothCircleMap};
pub use num_complex::Complex64;
pub use observable::{FiberTable, GridObservable, Observable, ObservableFn};
pub use transfer::{build_ulam, midpoints, Cocycle, GridDensity, OperatorCache, TwistWeight, UlamOperator};
pub use maps::validate_scenario;
pub use spectral::{
    adapted_norm_diagnostics, aperiodicity_check, decay_estimate, default_gap_parameters, lambda_curve, lambda_fd,
    twisted_eigendata, AdaptedNormData, AperiodicityReport, DecayFit, EigenData, EigenSettings, EquivariantChain,
    LambdaPoint,
};
pub use statistics::{
    birkhoff_samples, center, char_fn_check, clt_test, lclt_test, ldp_empirical, ldp_rate, scale_by_k, variance,
    BirkhoffSample, VarianceReport, VarianceSettings,
};
