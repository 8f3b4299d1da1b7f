//! Circle maps `T_ω : [0,1) → [0,1)` and their Lasota–Yorke constants.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::base::BaseSystem;
use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;
const ROOT_TOLERANCE: f64 = 1e-13;
/// Panels of the composite midpoint rule used for the distortion integral.
pub const QUADRATURE_PANELS: usize = 10_000;

/// Piecewise affine map; branch `i` acts on `[a_i, a_{i+1})` as
/// `x ↦ slope_i·x + offset_i (mod 1)`.
///
/// A point exactly on a breakpoint belongs to the branch on its right.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearMap {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    offsets: Vec<f64>,
    /// Image of each branch, `[lo, hi]` after subtracting `lift`.
    images: Vec<(f64, f64)>,
    lift: Vec<f64>,
}

impl PiecewiseLinearMap {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        let b = slopes.len();
        if b == 0 || breakpoints.len() != b + 1 || offsets.len() != b {
            return Err(Error::config(
                "maps.breakpoints",
                "need B+1 breakpoints with B slopes and B offsets",
            ));
        }
        if breakpoints[0] != 0.0 || breakpoints[b] != 1.0 {
            return Err(Error::config("maps.breakpoints", "must start at 0 and end at 1"));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("maps.breakpoints", "must be strictly increasing"));
        }
        let mut images = Vec::with_capacity(b);
        let mut lift = Vec::with_capacity(b);
        for i in 0..b {
            let s = slopes[i];
            if !s.is_finite() || s.abs() < 1e-12 {
                return Err(Error::config(
                    "maps.slopes",
                    format!("branch {i} has degenerate slope {s}"),
                ));
            }
            let y0 = s * breakpoints[i] + offsets[i];
            let y1 = s * breakpoints[i + 1] + offsets[i];
            let (lo, hi) = if y0 <= y1 { (y0, y1) } else { (y1, y0) };
            let k = (lo + 1e-12).floor();
            if hi - k > 1.0 + 1e-12 {
                return Err(Error::config(
                    "maps.slopes",
                    format!("branch {i} image [{lo}, {hi}] wraps around the circle; split the branch"),
                ));
            }
            images.push((lo - k, (hi - k).min(1.0)));
            lift.push(k);
        }
        Ok(PiecewiseLinearMap {
            breakpoints,
            slopes,
            offsets,
            images,
            lift,
        })
    }

    /// `x ↦ k·x mod 1` with `k` full branches.
    pub fn multiply_mod1(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("maps.factor", "must be positive"));
        }
        let kf = k as f64;
        let breakpoints = (0..=k).map(|i| i as f64 / kf).collect();
        let slopes = vec![kf; k as usize];
        let offsets = (0..k).map(|i| -(i as f64)).collect();
        Self::new(breakpoints, slopes, offsets)
    }

    /// `x ↦ a·x` for `0 < a ≤ 1`; not onto when `a < 1`.
    pub fn scale(a: f64) -> Result<Self> {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::config("maps.factor", format!("scale factor {a} not in (0, 1]")));
        }
        Self::new(vec![0.0, 1.0], vec![a], vec![0.0])
    }

    pub fn identity() -> Self {
        Self::new(vec![0.0, 1.0], vec![1.0], vec![0.0]).expect("identity is valid")
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn branch_count(&self) -> usize {
        self.slopes.len()
    }

    /// Branch image `[lo, hi]` inside `[0, 1]`.
    pub fn image(&self, branch: usize) -> (f64, f64) {
        self.images[branch]
    }

    pub(crate) fn lift(&self, branch: usize) -> f64 {
        self.lift[branch]
    }

    pub fn branch_of(&self, x: f64) -> usize {
        // partition_point gives the first breakpoint > x.
        let idx = self.breakpoints.partition_point(|a| *a <= x);
        idx.clamp(1, self.slopes.len()) - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.branch_of(x);
        wrap(self.slopes[i] * x + self.offsets[i] - self.lift[i])
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.slopes[self.branch_of(x)]
    }

    pub fn preimages(&self, y: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for i in 0..self.slopes.len() {
            let (a, b) = (self.breakpoints[i], self.breakpoints[i + 1]);
            let s = self.slopes[i];
            for target in [y + self.lift[i], y + self.lift[i] + 1.0] {
                let x = (target - self.offsets[i]) / s;
                if x >= a && x < b {
                    out.push((x, s.abs()));
                    break;
                }
            }
        }
        out
    }

    /// Whether the branch images cover the circle.
    pub fn is_onto(&self) -> bool {
        let mut iv: Vec<(f64, f64)> = self.images.clone();
        iv.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut covered = 0.0;
        for (lo, hi) in iv {
            if lo > covered + 1e-12 {
                return false;
            }
            covered = f64::max(covered, hi);
        }
        covered >= 1.0 - 1e-12
    }
}

/// `T(x) = d·x + ε·sin(2πx)/(2π) + phase (mod 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothCircleMap {
    degree: u32,
    epsilon: f64,
    phase: f64,
}

impl SmoothCircleMap {
    pub fn new(degree: u32, epsilon: f64, phase: f64) -> Result<Self> {
        if degree < 2 {
            return Err(Error::config("maps.degree", "must be at least 2"));
        }
        if !(epsilon >= 0.0 && epsilon < degree as f64) {
            return Err(Error::config(
                "maps.epsilon",
                format!("need 0 <= epsilon < degree for a monotone lift, got {epsilon}"),
            ));
        }
        if !phase.is_finite() {
            return Err(Error::config("maps.phase", "must be finite"));
        }
        Ok(SmoothCircleMap {
            degree,
            epsilon,
            phase,
        })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The increasing lift `F : [0,1] → [phase, phase + d]`.
    pub fn lift(&self, x: f64) -> f64 {
        self.degree as f64 * x + self.epsilon * (TWO_PI * x).sin() / TWO_PI + self.phase
    }

    pub fn eval(&self, x: f64) -> f64 {
        wrap(self.lift(x))
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.degree as f64 + self.epsilon * (TWO_PI * x).cos()
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        -TWO_PI * self.epsilon * (TWO_PI * x).sin()
    }

    /// Solves `F(x) = target` on `[0, 1]` by safeguarded Newton iteration.
    fn invert_lift(&self, target: f64, branch: usize) -> Result<f64> {
        let d = self.degree as f64;
        let slack = self.epsilon / TWO_PI;
        let mut lo = ((target - self.phase - slack) / d).max(0.0);
        let mut hi = ((target - self.phase + slack) / d).min(1.0);
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.lift(x) - target;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let step = f / self.derivative(x);
            let mut next = x - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= ROOT_TOLERANCE || hi - lo <= ROOT_TOLERANCE {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::Numeric(format!(
            "preimage solver did not converge on branch {branch} (target {target})"
        )))
    }

    pub fn preimages(&self, y: f64) -> Result<Vec<(f64, f64)>> {
        let start = self.lift(0.0);
        let d = self.degree as usize;
        let mut out = Vec::with_capacity(d);
        // Targets y + m inside [F(0), F(0) + d).
        let m = (start - y).ceil();
        for branch in 0..d {
            let target = y + m + branch as f64;
            let x = self.invert_lift(target, branch)?;
            let x = if x >= 1.0 { x - 1.0 } else { x };
            out.push((x, self.derivative(x).abs()));
        }
        Ok(out)
    }
}

/// Reduces to `[0, 1)`, identifying 1 with 0.
#[inline]
pub fn wrap(y: f64) -> f64 {
    let r = y - y.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Deterministic Lasota–Yorke data of a single map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyConstants {
    /// `essinf |T'|`.
    pub lambda_min: f64,
    /// `sup |T''| / (T')²`.
    pub distortion: f64,
    /// `∫ |T''| / (T')² dm`.
    pub distortion_integral: f64,
    /// `2·max(1/λ, ∫ |T''|/(T')² dm)`.
    pub c0: f64,
    pub branch_count: usize,
}

/// A single member of the random family.
#[derive(Debug, Clone, PartialEq)]
pub enum CircleMap {
    PiecewiseLinear(PiecewiseLinearMap),
    SmoothCircle(SmoothCircleMap),
}

impl CircleMap {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            CircleMap::PiecewiseLinear(m) => m.eval(x),
            CircleMap::SmoothCircle(m) => m.eval(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            CircleMap::PiecewiseLinear(m) => m.derivative(x),
            CircleMap::SmoothCircle(m) => m.derivative(x),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            CircleMap::PiecewiseLinear(_) => 0.0,
            CircleMap::SmoothCircle(m) => m.second_derivative(x),
        }
    }

    /// All `x` with `T(x) = y`, paired with `|T'(x)|`.
    pub fn branch_preimages(&self, y: f64) -> Result<Vec<(f64, f64)>> {
        match self {
            CircleMap::PiecewiseLinear(m) => Ok(m.preimages(y)),
            CircleMap::SmoothCircle(m) => m.preimages(y),
        }
    }

    pub fn branch_count(&self) -> usize {
        match self {
            CircleMap::PiecewiseLinear(m) => m.branch_count(),
            CircleMap::SmoothCircle(m) => m.degree() as usize,
        }
    }

    pub fn is_onto(&self) -> bool {
        match self {
            CircleMap::PiecewiseLinear(m) => m.is_onto(),
            CircleMap::SmoothCircle(_) => true,
        }
    }

    pub fn ly_constants(&self) -> LyConstants {
        match self {
            CircleMap::PiecewiseLinear(m) => {
                let lambda_min = m
                    .slopes()
                    .iter()
                    .map(|s| s.abs())
                    .fold(f64::INFINITY, f64::min);
                LyConstants {
                    lambda_min,
                    distortion: 0.0,
                    distortion_integral: 0.0,
                    c0: 2.0 / lambda_min,
                    branch_count: m.branch_count(),
                }
            }
            CircleMap::SmoothCircle(m) => {
                let lambda_min = m.degree() as f64 - m.epsilon();
                let (integral, sup) = distortion_quadrature(m, QUADRATURE_PANELS);
                LyConstants {
                    lambda_min,
                    distortion: sup,
                    distortion_integral: integral,
                    c0: 2.0 * f64::max(1.0 / lambda_min, integral),
                    branch_count: m.degree() as usize,
                }
            }
        }
    }
}

/// Composite midpoint rule for `∫ |T''|/(T')²` together with the sampled sup.
pub fn distortion_quadrature(m: &SmoothCircleMap, panels: usize) -> (f64, f64) {
    let h = 1.0 / panels as f64;
    let mut sum = 0.0;
    let mut sup: f64 = 0.0;
    for i in 0..panels {
        let x = (i as f64 + 0.5) * h;
        let d1 = m.derivative(x);
        let v = m.second_derivative(x).abs() / (d1 * d1);
        sum += v;
        sup = sup.max(v);
    }
    (sum * h, sup)
}

/// One map per alphabet symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFamily {
    maps: Vec<CircleMap>,
}

impl MapFamily {
    pub fn new(maps: Vec<CircleMap>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::config("maps", "family is empty"));
        }
        Ok(MapFamily { maps })
    }

    pub fn single(map: CircleMap) -> Self {
        MapFamily { maps: vec![map] }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn get(&self, symbol: usize) -> &CircleMap {
        &self.maps[symbol]
    }

    pub fn iter(&self) -> impl Iterator<Item = &CircleMap> {
        self.maps.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub expanding_on_average: bool,
    /// `Σ_i p_i log λ(T_i)` under the stationary law.
    pub mean_log_lambda: f64,
    pub per_map: Vec<LyConstants>,
    pub warnings: Vec<String>,
}

/// Checks the expanding-on-average hypothesis exactly over the finite alphabet.
pub fn validate_scenario(family: &MapFamily, base: &BaseSystem) -> Result<ScenarioReport> {
    base.validate()?;
    if family.len() != base.alphabet_size {
        return Err(Error::config(
            "maps",
            format!(
                "{} maps for an alphabet of size {}",
                family.len(),
                base.alphabet_size
            ),
        ));
    }
    let pi = base.stationary()?;
    let per_map: Vec<LyConstants> = family.iter().map(|m| m.ly_constants()).collect();
    let mean_log_lambda = per_map
        .iter()
        .zip(&pi)
        .filter(|(_, p)| **p > 0.0)
        .map(|(c, p)| p * c.lambda_min.ln())
        .sum::<f64>();
    let mut warnings = Vec::new();
    for (i, m) in family.iter().enumerate() {
        if !m.is_onto() {
            warnings.push(format!(
                "map {i} is not onto; covering is only checked empirically by the decay fit"
            ));
        }
        if per_map[i].lambda_min < 1.0 && pi[i] > 0.0 {
            warnings.push(format!(
                "map {i} contracts somewhere (essinf |T'| = {})",
                per_map[i].lambda_min
            ));
        }
    }
    Ok(ScenarioReport {
        expanding_on_average: mean_log_lambda > 0.0,
        mean_log_lambda,
        per_map,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doubling() -> CircleMap {
        CircleMap::PiecewiseLinear(PiecewiseLinearMap::multiply_mod1(2).unwrap())
    }

    fn half() -> CircleMap {
        CircleMap::PiecewiseLinear(PiecewiseLinearMap::scale(0.5).unwrap())
    }

    fn smooth(d: u32, eps: f64) -> CircleMap {
        CircleMap::SmoothCircle(SmoothCircleMap::new(d, eps, 0.0).unwrap())
    }

    #[test]
    fn eval_examples() {
        assert_eq!(doubling().eval(0.3), 0.6);
        assert_eq!(half().eval(0.8), 0.4);
        assert!((smooth(2, 0.0).eval(0.75) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn explicit_doubling_matches_factory() {
        let m = PiecewiseLinearMap::new(vec![0.0, 0.5, 1.0], vec![2.0, 2.0], vec![0.0, -1.0]).unwrap();
        assert_eq!(m, PiecewiseLinearMap::multiply_mod1(2).unwrap());
    }

    #[test]
    fn breakpoint_goes_to_right_branch() {
        let m = PiecewiseLinearMap::multiply_mod1(2).unwrap();
        assert_eq!(m.branch_of(0.5), 1);
        assert_eq!(m.branch_of(0.0), 0);
        assert_eq!(m.eval(0.5), 0.0);
    }

    #[test]
    fn preimage_examples() {
        let mut p = doubling().branch_preimages(0.5).unwrap();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(p, vec![(0.25, 2.0), (0.75, 2.0)]);
        assert!(half().branch_preimages(0.7).unwrap().is_empty());
        assert_eq!(smooth(2, 0.5).branch_preimages(0.0).unwrap().len(), 2);
    }

    #[test]
    fn smooth_preimages_solve_the_equation() {
        let m = smooth(3, 2.5);
        for k in 0..50 {
            let y = k as f64 / 50.0 + 0.003;
            let pre = m.branch_preimages(y).unwrap();
            assert_eq!(pre.len(), 3);
            for (x, d) in pre {
                assert!((0.0..1.0).contains(&x));
                let e = (m.eval(x) - y).abs();
                assert!(e.min(1.0 - e) < 1e-12, "y {y} x {x}");
                assert!((d - m.derivative(x).abs()).abs() < 1e-15);
            }
        }
    }

    /// Σ 1/|T'| over preimages is the transfer operator applied to 1; it must
    /// integrate to 1 (midpoint quadrature over y).
    #[test]
    fn preimage_weights_integrate_to_one() {
        for map in [smooth(2, 0.5), smooth(3, 2.2), doubling(), half()] {
            let n = 20_000;
            let total: f64 = (0..n)
                .map(|i| {
                    let y = (i as f64 + 0.5) / n as f64;
                    map.branch_preimages(y)
                        .unwrap()
                        .iter()
                        .map(|(_, d)| 1.0 / d)
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n as f64;
            assert!((total - 1.0).abs() < 1e-8, "{map:?}: {total}");
        }
    }

    #[test]
    fn pl_eval_and_preimages_round_trip() {
        let m = PiecewiseLinearMap::new(
            vec![0.0, 1.0 / 3.0, 1.0],
            vec![3.0, 1.5],
            vec![0.0, -0.5],
        )
        .unwrap();
        for k in 0..997 {
            let y = k as f64 / 997.0;
            for (x, _) in m.preimages(y) {
                assert!((m.eval(x) - y).abs() <= 1e-12);
            }
            let x = (k as f64 + 0.37) / 997.0;
            let back = m.preimages(m.eval(x));
            assert!(back.iter().any(|(z, _)| (z - x).abs() <= 1e-12));
        }
    }

    #[test]
    fn unperturbed_smooth_equals_pl() {
        let pl = doubling();
        let sm = smooth(2, 0.0);
        for k in 0..1000 {
            let x = k as f64 / 1000.0 + 1e-4;
            assert!((pl.eval(x) - sm.eval(x)).abs() <= 1e-15);
        }
    }

    #[test]
    fn ly_constants_examples() {
        let c = doubling().ly_constants();
        assert_eq!((c.lambda_min, c.distortion, c.branch_count), (2.0, 0.0, 2));
        assert_eq!(c.c0, 1.0);
        assert_eq!(smooth(2, 0.0).ly_constants().c0, 1.0);
        let c = smooth(2, 0.5).ly_constants();
        assert_eq!(c.lambda_min, 1.5);
        let CircleMap::SmoothCircle(m) = smooth(2, 0.5) else { unreachable!() };
        let (fine, _) = distortion_quadrature(&m, 1_000_000);
        assert!((c.distortion_integral - fine).abs() <= 1e-6 * fine);
        assert!((c.c0 - 2.0 * f64::max(1.0 / 1.5, c.distortion_integral)).abs() < 1e-15);
    }

    #[test]
    fn validate_examples() {
        let base1 = BaseSystem::deterministic(0);
        let r = validate_scenario(&MapFamily::single(doubling()), &base1).unwrap();
        assert!(r.expanding_on_average);
        assert!((r.mean_log_lambda - 2f64.ln()).abs() < 1e-15);

        let fam = MapFamily::new(vec![doubling(), half()]).unwrap();
        let r = validate_scenario(&fam, &BaseSystem::iid(vec![0.5, 0.5], 0).unwrap()).unwrap();
        assert!(r.mean_log_lambda.abs() < 1e-15);
        assert!(!r.expanding_on_average);

        let triple = CircleMap::PiecewiseLinear(PiecewiseLinearMap::multiply_mod1(3).unwrap());
        let fam = MapFamily::new(vec![triple, half()]).unwrap();
        let r = validate_scenario(&fam, &BaseSystem::iid(vec![0.7, 0.3], 0).unwrap()).unwrap();
        let expected = 0.7 * 3f64.ln() - 0.3 * 2f64.ln();
        assert!((r.mean_log_lambda - expected).abs() < 1e-15);
        assert!((r.mean_log_lambda - 0.5611).abs() < 1e-4);
        assert!(r.expanding_on_average);
        assert!(r.warnings.iter().any(|w| w.contains("not onto")));
    }

    #[test]
    fn invalid_maps_are_rejected() {
        assert!(PiecewiseLinearMap::new(vec![0.0, 1.0], vec![0.0], vec![0.0]).is_err());
        assert!(PiecewiseLinearMap::new(vec![0.0, 1.0], vec![2.0], vec![0.0]).is_err());
        assert!(SmoothCircleMap::new(1, 0.0, 0.0).is_err());
        assert!(SmoothCircleMap::new(2, 2.0, 0.0).is_err());
    }
}
