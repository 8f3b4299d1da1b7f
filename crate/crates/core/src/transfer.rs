//! Grid densities and Ulam approximations of (twisted) transfer operators.
//!
//! Densities are piecewise constant on `N` uniform cells of the circle. The
//! Ulam operator of a map `T` is the column-stochastic matrix
//! `P[i][j] = m(cell_j ∩ T⁻¹ cell_i) / m(cell_j)`; the twisted operator is
//! `P · diag(e^{θψ(m_i)})` with `m_i` the cell midpoints.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};
use std::sync::{Arc, RwLock};

use num_complex::Complex64;

use crate::base::OmegaPath;
use crate::error::{Error, Result};
use crate::maps::{CircleMap, MapFamily, PiecewiseLinearMap, SmoothCircleMap};
use crate::observable::GridObservable;

/// Sub-panels per source cell when a smooth branch image spans more than two
/// target cells.
pub const SMOOTH_SUBPANELS: usize = 8;

const DUMP_MAGIC: &[u8; 4] = b"QLUL";
const DUMP_VERSION: u32 = 1;

pub fn midpoints(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

pub fn check_resolution(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::config(
            "grid.resolution",
            format!("resolution {n} is not a power of two >= 2"),
        ));
    }
    Ok(())
}

/// Piecewise-constant complex function on the uniform grid of the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    values: Vec<Complex64>,
}

impl GridDensity {
    pub fn from_complex(values: Vec<Complex64>) -> Self {
        GridDensity { values }
    }

    pub fn from_real(values: &[f64]) -> Self {
        GridDensity {
            values: values.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
        }
    }

    /// Lebesgue density `1`.
    pub fn uniform(n: usize) -> Self {
        GridDensity {
            values: vec![Complex64::new(1.0, 0.0); n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        GridDensity {
            values: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    /// Indicator of cells `lo..hi`.
    pub fn indicator(n: usize, lo: usize, hi: usize) -> Self {
        GridDensity {
            values: (0..n)
                .map(|i| Complex64::new(if i >= lo && i < hi { 1.0 } else { 0.0 }, 0.0))
                .collect(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// `∫ d dm`.
    pub fn integral(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() / self.values.len() as f64
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).sum::<f64>() / self.values.len() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Circle variation, including the wrap-around jump.
    pub fn variation(&self) -> f64 {
        let n = self.values.len();
        let mut var = (self.values[0] - self.values[n - 1]).norm();
        for w in self.values.windows(2) {
            var += (w[1] - w[0]).norm();
        }
        var
    }

    pub fn bv_norm(&self) -> f64 {
        self.l1_norm() + self.variation()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        GridDensity {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn scale_in_place(&mut self, c: Complex64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    /// Rescaled so that `∫ d dm = 1`.
    pub fn normalized(&self) -> Result<Self> {
        let s = self.integral();
        if s.norm() == 0.0 || !s.is_finite() {
            return Err(Error::Numeric(format!("cannot normalize density with integral {s}")));
        }
        Ok(self.scale(s.inv()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Writes `index,real,imag` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,real,imag")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{i},{:.16e},{:.16e}", v.re, v.im)?;
        }
        Ok(())
    }
}

impl Add for &GridDensity {
    type Output = GridDensity;
    fn add(self, rhs: &GridDensity) -> GridDensity {
        GridDensity {
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &GridDensity {
    type Output = GridDensity;
    fn sub(self, rhs: &GridDensity) -> GridDensity {
        GridDensity {
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &GridDensity {
    type Output = GridDensity;
    fn mul(self, rhs: f64) -> GridDensity {
        self.scale(Complex64::new(rhs, 0.0))
    }
}

/// `e^{θψ}` sampled at the cell midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistWeight {
    pub theta: Complex64,
    values: Vec<Complex64>,
}

impl TwistWeight {
    pub fn new(theta: Complex64, midpoint_values: &[f64]) -> Self {
        TwistWeight {
            theta,
            values: midpoint_values.iter().map(|v| (theta * v).exp()).collect(),
        }
    }

    pub fn from_values(theta: Complex64, values: Vec<Complex64>) -> Self {
        TwistWeight { theta, values }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn resolution(&self) -> usize {
        self.values.len()
    }
}

/// Column-stochastic Ulam matrix in compressed-column form.
#[derive(Debug, Clone, PartialEq)]
pub struct UlamOperator {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

impl UlamOperator {
    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(row, value)` pairs of column `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        self.row_idx[a..b]
            .iter()
            .zip(&self.values[a..b])
            .map(|(r, v)| (*r as usize, *v))
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.column(j).find(|(r, _)| *r == i).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        self.column(j).map(|(_, v)| v).sum()
    }

    /// `out ← P (w ⊙ input)`.
    pub fn apply_slice(
        &self,
        weight: Option<&[Complex64]>,
        input: &[Complex64],
        out: &mut [Complex64],
    ) {
        out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for j in 0..self.n {
            let x = match weight {
                Some(w) => w[j] * input[j],
                None => input[j],
            };
            if x.re == 0.0 && x.im == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                out[self.row_idx[k] as usize] += x * self.values[k];
            }
        }
    }

    /// `out ← P input` for real vectors.
    pub fn apply_real(&self, input: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, x) in input.iter().enumerate() {
            if *x == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                out[self.row_idx[k] as usize] += x * self.values[k];
            }
        }
    }

    /// `P (w ⊙ d)`; without a weight this is the plain transfer operator.
    pub fn apply(&self, weight: Option<&TwistWeight>, d: &GridDensity) -> Result<GridDensity> {
        if d.resolution() != self.n {
            return Err(Error::Usage(format!(
                "density resolution {} does not match operator resolution {}",
                d.resolution(),
                self.n
            )));
        }
        if let Some(w) = weight {
            if w.resolution() != self.n {
                return Err(Error::Usage(format!(
                    "twist resolution {} does not match operator resolution {}",
                    w.resolution(),
                    self.n
                )));
            }
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        self.apply_slice(weight.map(|w| w.values()), d.values(), &mut out);
        Ok(GridDensity::from_complex(out))
    }

    fn from_columns(n: usize, columns: Vec<Vec<(u32, f64)>>) -> Self {
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for mut col in columns {
            col.sort_by_key(|(r, _)| *r);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(col.len());
            for (r, v) in col {
                match merged.last_mut() {
                    Some((lr, lv)) if *lr == r => *lv += v,
                    _ => merged.push((r, v)),
                }
            }
            merged.retain(|(_, v)| *v > 0.0);
            let sum: f64 = merged.iter().map(|(_, v)| v).sum();
            for (r, v) in merged {
                row_idx.push(r);
                values.push(v / sum);
            }
            col_ptr.push(row_idx.len());
        }
        UlamOperator {
            n,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Little-endian dump: magic, version, N, symbol, θ (re, im), nnz,
    /// column pointers, row indices, values.
    pub fn write_binary<W: Write>(&self, mut w: W, symbol: u32, theta: Complex64) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&symbol.to_le_bytes())?;
        w.write_all(&theta.re.to_le_bytes())?;
        w.write_all(&theta.im.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for p in &self.col_ptr {
            w.write_all(&(*p as u64).to_le_bytes())?;
        }
        for r in &self.row_idx {
            w.write_all(&r.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<(Self, u32, Complex64)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Usage("not an operator dump (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != DUMP_VERSION {
            return Err(Error::Usage(format!("unsupported dump version {version}")));
        }
        let n = read_u64(&mut r)? as usize;
        let symbol = read_u32(&mut r)?;
        let theta = Complex64::new(read_f64(&mut r)?, read_f64(&mut r)?);
        let nnz = read_u64(&mut r)? as usize;
        let col_ptr = (0..=n)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let row_idx = (0..nnz).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let values = (0..nnz).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        if col_ptr.last() != Some(&nnz) {
            return Err(Error::Usage("corrupt operator dump".into()));
        }
        Ok((
            UlamOperator {
                n,
                col_ptr,
                row_idx,
                values,
            },
            symbol,
            theta,
        ))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Spreads `mass` uniformly over the image interval `[lo, hi]` (unwrapped
/// coordinates) and accumulates the target-cell shares into `col`.
fn spread(col: &mut Vec<(u32, f64)>, n: usize, lo: f64, hi: f64, mass: f64) {
    let nf = n as f64;
    let width = hi - lo;
    if width <= 0.0 {
        let t = ((lo * nf).floor() as i64).rem_euclid(n as i64);
        col.push((t as u32, mass));
        return;
    }
    let first = (lo * nf).floor() as i64;
    let last = ((hi * nf).ceil() as i64 - 1).max(first);
    for t in first..=last {
        let a = f64::max(lo, t as f64 / nf);
        let b = f64::min(hi, (t + 1) as f64 / nf);
        if b > a {
            col.push(((t.rem_euclid(n as i64)) as u32, mass * (b - a) / width));
        }
    }
}

fn build_piecewise_linear(map: &PiecewiseLinearMap, n: usize) -> Vec<Vec<(u32, f64)>> {
    let nf = n as f64;
    let mut columns = vec![Vec::new(); n];
    let bp = map.breakpoints();
    for b in 0..map.branch_count() {
        let (a0, a1) = (bp[b], bp[b + 1]);
        let s = map.slopes()[b];
        let o = map.offsets()[b] - map.lift(b);
        let j0 = (a0 * nf).floor() as usize;
        let j1 = ((a1 * nf).ceil() as usize).min(n);
        for (j, col) in columns.iter_mut().enumerate().take(j1).skip(j0) {
            let l = f64::max(a0, j as f64 / nf);
            let r = f64::min(a1, (j + 1) as f64 / nf);
            if r <= l {
                continue;
            }
            let (y0, y1) = (s * l + o, s * r + o);
            let (lo, hi) = if y0 <= y1 { (y0, y1) } else { (y1, y0) };
            // Fraction of cell j carried by this branch.
            spread(col, n, lo, hi, (r - l) * nf);
        }
    }
    columns
}

fn build_smooth(map: &SmoothCircleMap, n: usize) -> Vec<Vec<(u32, f64)>> {
    let nf = n as f64;
    (0..n)
        .map(|j| {
            let l = j as f64 / nf;
            let r = (j + 1) as f64 / nf;
            let (y0, y1) = (map.lift(l), map.lift(r));
            let touched = ((y1 * nf).ceil() - (y0 * nf).floor()) as usize;
            let mut col = Vec::new();
            if touched > 2 {
                let h = (r - l) / SMOOTH_SUBPANELS as f64;
                for k in 0..SMOOTH_SUBPANELS {
                    let a = l + k as f64 * h;
                    let b = if k + 1 == SMOOTH_SUBPANELS { r } else { a + h };
                    spread(
                        &mut col,
                        n,
                        map.lift(a),
                        map.lift(b),
                        1.0 / SMOOTH_SUBPANELS as f64,
                    );
                }
            } else {
                spread(&mut col, n, y0, y1, 1.0);
            }
            col
        })
        .collect()
}

/// Ulam matrix of `map` at resolution `n`.
pub fn build_ulam(map: &CircleMap, n: usize) -> Result<UlamOperator> {
    check_resolution(n)?;
    let columns = match map {
        CircleMap::PiecewiseLinear(m) => build_piecewise_linear(m, n),
        CircleMap::SmoothCircle(m) => build_smooth(m, n),
    };
    Ok(UlamOperator::from_columns(n, columns))
}

/// Ulam operators keyed by symbol at a fixed resolution. Concurrent readers
/// share entries; racing inserts keep the first value.
#[derive(Debug)]
pub struct OperatorCache {
    resolution: usize,
    ops: RwLock<HashMap<usize, Arc<UlamOperator>>>,
}

impl OperatorCache {
    pub fn new(resolution: usize) -> Result<Self> {
        check_resolution(resolution)?;
        Ok(OperatorCache {
            resolution,
            ops: RwLock::new(HashMap::new()),
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn get(&self, symbol: usize, map: &CircleMap) -> Result<Arc<UlamOperator>> {
        if let Some(op) = self.ops.read().expect("cache lock").get(&symbol) {
            return Ok(Arc::clone(op));
        }
        let built = Arc::new(build_ulam(map, self.resolution)?);
        let mut guard = self.ops.write().expect("cache lock");
        Ok(Arc::clone(guard.entry(symbol).or_insert(built)))
    }

    pub fn len(&self) -> usize {
        self.ops.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A realized cocycle: base path, map family and the operator cache at one
/// grid resolution. Fiber `j` refers to `σ^j ω`.
#[derive(Debug)]
pub struct Cocycle {
    path: OmegaPath,
    family: MapFamily,
    cache: OperatorCache,
}

impl Cocycle {
    pub fn new(path: OmegaPath, family: MapFamily, resolution: usize) -> Result<Self> {
        if family.len() != path.alphabet_size() {
            return Err(Error::config(
                "maps",
                format!(
                    "{} maps for an alphabet of size {}",
                    family.len(),
                    path.alphabet_size()
                ),
            ));
        }
        Ok(Cocycle {
            path,
            family,
            cache: OperatorCache::new(resolution)?,
        })
    }

    pub fn path(&self) -> &OmegaPath {
        &self.path
    }

    pub fn family(&self) -> &MapFamily {
        &self.family
    }

    pub fn resolution(&self) -> usize {
        self.cache.resolution()
    }

    pub fn cache(&self) -> &OperatorCache {
        &self.cache
    }

    pub fn symbol(&self, fiber: i64) -> Result<usize> {
        self.path.symbol_at(fiber)
    }

    pub fn map(&self, fiber: i64) -> Result<&CircleMap> {
        Ok(self.family.get(self.symbol(fiber)?))
    }

    pub fn operator(&self, fiber: i64) -> Result<Arc<UlamOperator>> {
        let s = self.symbol(fiber)?;
        self.cache.get(s, self.family.get(s))
    }

    /// One step `L^θ_{σ^fiber ω}` applied in place (`buf` is scratch space).
    pub fn step(
        &self,
        fiber: i64,
        twist: Option<(&GridObservable<'_>, Complex64)>,
        u: &mut Vec<Complex64>,
        buf: &mut Vec<Complex64>,
    ) -> Result<()> {
        let op = self.operator(fiber)?;
        match twist {
            Some((obs, theta)) if theta != Complex64::new(0.0, 0.0) => {
                let w = obs.twist(fiber, self.symbol(fiber)?, theta)?;
                op.apply_slice(Some(w.values()), u, buf);
            }
            _ => op.apply_slice(None, u, buf),
        }
        std::mem::swap(u, buf);
        Ok(())
    }

    /// One untwisted step on a real vector, in place.
    pub fn step_real(&self, fiber: i64, u: &mut Vec<f64>, buf: &mut Vec<f64>) -> Result<()> {
        self.operator(fiber)?.apply_real(u, buf);
        std::mem::swap(u, buf);
        Ok(())
    }

    /// `L^{θ,n}_{σ^start ω} d = L^θ_{σ^{start+n-1}ω} ∘ ⋯ ∘ L^θ_{σ^start ω} d`.
    pub fn compose_apply(
        &self,
        start: i64,
        twist: Option<(&GridObservable<'_>, Complex64)>,
        n: usize,
        d: &GridDensity,
    ) -> Result<GridDensity> {
        if d.resolution() != self.resolution() {
            return Err(Error::Usage(format!(
                "density resolution {} does not match cocycle resolution {}",
                d.resolution(),
                self.resolution()
            )));
        }
        if n > 0 {
            self.path.require(start, start + n as i64 - 1)?;
        }
        let mut u = d.values().to_vec();
        let mut buf = vec![Complex64::new(0.0, 0.0); u.len()];
        for k in 0..n as i64 {
            self.step(start + k, twist, &mut u, &mut buf)?;
        }
        Ok(GridDensity::from_complex(u))
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::maps::PiecewiseLinearMap;
    use proptest::prelude::*;

    fn density(v: Vec<f64>) -> GridDensity {
        GridDensity::from_real(&v)
    }

    proptest! {
        #[test]
        fn apply_is_linear(
            a in -5.0f64..5.0,
            d1 in proptest::collection::vec(-3.0f64..3.0, 64),
            d2 in proptest::collection::vec(-3.0f64..3.0, 64),
        ) {
            let op = build_ulam(
                &CircleMap::PiecewiseLinear(PiecewiseLinearMap::multiply_mod1(3).unwrap()),
                64,
            ).unwrap();
            let (d1, d2) = (density(d1), density(d2));
            let lhs = op.apply(None, &(&(&d1 * a) + &d2)).unwrap();
            let rhs = &(&op.apply(None, &d1).unwrap() * a) + &op.apply(None, &d2).unwrap();
            prop_assert!((&lhs - &rhs).sup_norm() <= 1e-13);
        }

        #[test]
        fn variation_axioms(
            t in -10.0f64..10.0,
            d1 in proptest::collection::vec(-3.0f64..3.0, 32),
            d2 in proptest::collection::vec(-3.0f64..3.0, 32),
        ) {
            let (d1, d2) = (density(d1), density(d2));
            prop_assert!(((&d1 * t).variation() - t.abs() * d1.variation()).abs() <= 1e-12 * (1.0 + d1.variation()));
            prop_assert!((&d1 + &d2).variation() <= d1.variation() + d2.variation() + 1e-12);
            prop_assert!(d1.sup_norm() <= d1.l1_norm() + d1.variation() + 1e-12);
        }
    }
}
