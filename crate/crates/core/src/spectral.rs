//! Periodic sampling lattice, discrete Fourier transforms and spectral operators.
//!
//! Fields live on a uniform lattice of `points_per_axis^dim` points covering the
//! torus `[0, period)^dim`. Samples are stored component-major; inside a
//! component the index runs with axis 0 fastest.
//!
//! The forward transform is normalised so that `coef(k) = (1/M) sum_x f(x) e^{-ik.x}`
//! and the inverse is the plain Fourier sum. Modes with any `|m_i| = n/2` (the
//! Nyquist planes) are kept by the transforms so that arbitrary samples round
//! trip, but every spectral operator treats them as unresolved and zeroes them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Sub, SubAssign};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    points_per_axis: usize,
    period: f64,
}

impl Grid {
    pub fn new(dim: usize, points_per_axis: usize, period: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "dim must be 1, 2 or 3, got {dim}"
            )));
        }
        if !points_per_axis.is_multiple_of(2) || points_per_axis < 8 {
            return Err(Error::InvalidGrid(format!(
                "points_per_axis must be even and at least 8, got {points_per_axis}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "period must be positive, got {period}"
            )));
        }
        Ok(Self {
            dim,
            points_per_axis,
            period,
        })
    }

    /// Grid on the standard `2π`-periodic torus.
    pub fn standard(dim: usize, points_per_axis: usize) -> Result<Self> {
        Self::new(dim, points_per_axis, 2.0 * PI)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Largest resolved integer frequency per axis.
    pub fn cutoff(&self) -> usize {
        self.points_per_axis / 2 - 1
    }

    /// Total number of lattice points.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn volume(&self) -> f64 {
        self.period.powi(self.dim as i32)
    }

    /// Lattice spacing `h`.
    pub fn spacing(&self) -> f64 {
        self.period / self.points_per_axis as f64
    }

    /// Physical wavenumber of integer frequency 1.
    pub fn base_wavenumber(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n = self.points_per_axis;
        let mut out = [0; 3];
        let mut rest = idx;
        for c in out.iter_mut().take(self.dim) {
            *c = rest % n;
            rest /= n;
        }
        out
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let h = self.spacing();
        let c = self.coords(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = c[a] as f64 * h;
        }
        x
    }

    /// Signed integer frequency stored at FFT index `i` along one axis.
    pub fn signed_frequency(&self, i: usize) -> i64 {
        let n = self.points_per_axis;
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Flat FFT index for an integer frequency vector (frequencies wrap).
    pub fn mode_index(&self, m: [i64; 3]) -> usize {
        let n = self.points_per_axis as i64;
        let mut idx = 0usize;
        for a in (0..self.dim).rev() {
            idx = idx * n as usize + m[a].rem_euclid(n) as usize;
        }
        idx
    }

    /// Cached per-mode tables for this grid.
    pub fn modes(&self) -> Arc<ModeTable> {
        type Key = (usize, usize, u64);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<ModeTable>>>> = OnceLock::new();
        let key = (self.dim, self.points_per_axis, self.period.to_bits());
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("mode cache poisoned");
        guard
            .entry(key)
            .or_insert_with(|| Arc::new(ModeTable::build(self)))
            .clone()
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch(format!("grid {self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Per-mode data for a grid: integer frequencies, physical wavevectors and
/// the masks used by the truncation rules.
#[derive(Debug)]
pub struct ModeTable {
    pub freq: Vec<[i64; 3]>,
    pub wavevector: Vec<[f64; 3]>,
    pub k2: Vec<f64>,
    /// All `|m_i| <= cutoff`.
    pub resolved: Vec<bool>,
    /// Kept by the two-thirds rule: all `|m_i| <= (2/3)(n/2)`.
    pub dealiased: Vec<bool>,
    /// Inside the one-third ball: all `|m_i| <= (1/3)(n/2)`.
    pub third: Vec<bool>,
}

impl ModeTable {
    fn build(grid: &Grid) -> Self {
        let len = grid.len();
        let n = grid.points_per_axis as i64;
        let cutoff = grid.cutoff() as i64;
        let k0 = grid.base_wavenumber();
        let mut freq = Vec::with_capacity(len);
        let mut wavevector = Vec::with_capacity(len);
        let mut k2 = Vec::with_capacity(len);
        let mut resolved = Vec::with_capacity(len);
        let mut dealiased = Vec::with_capacity(len);
        let mut third = Vec::with_capacity(len);
        for idx in 0..len {
            let c = grid.coords(idx);
            let mut m = [0i64; 3];
            let mut k = [0.0; 3];
            for a in 0..grid.dim {
                m[a] = grid.signed_frequency(c[a]);
                k[a] = m[a] as f64 * k0;
            }
            freq.push(m);
            wavevector.push(k);
            k2.push(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
            resolved.push(m.iter().all(|&v| v.abs() <= cutoff));
            dealiased.push(m.iter().all(|&v| 3 * v.abs() <= n));
            third.push(m.iter().all(|&v| 6 * v.abs() <= n));
        }
        Self {
            freq,
            wavevector,
            k2,
            resolved,
            dealiased,
            third,
        }
    }
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    type PlanPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);
    static PLANS: OnceLock<Mutex<HashMap<usize, PlanPair>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        })
        .clone()
}

/// Unnormalised in-place multi-dimensional FFT of one component.
fn fft_nd(grid: &Grid, data: &mut [Complex64], inverse: bool) {
    let n = grid.points_per_axis;
    let (fwd, inv) = plans(n);
    let plan = if inverse { inv } else { fwd };
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    // axis 0 lines are contiguous
    plan.process_with_scratch(data, &mut scratch);
    let len = data.len();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 1..grid.dim {
        let stride = n.pow(axis as u32);
        let block = stride * n;
        for start in (0..len).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[base + i * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    data[base + i * stride] = *v;
                }
            }
        }
    }
}

/// Real samples of a (possibly vector-valued) field.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid,
    components: usize,
    data: Vec<f64>,
}

impl RealField {
    pub fn zeros(grid: Grid, components: usize) -> Self {
        Self {
            grid,
            components,
            data: vec![0.0; components * grid.len()],
        }
    }

    pub fn constant(grid: Grid, values: &[f64]) -> Self {
        let mut f = Self::zeros(grid, values.len());
        for (c, &v) in values.iter().enumerate() {
            f.component_mut(c).fill(v);
        }
        f
    }

    /// Builds a field from component-major samples, rejecting NaN/Inf.
    pub fn from_vec(grid: Grid, components: usize, data: Vec<f64>) -> Result<Self> {
        if components == 0 || data.len() != components * grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} samples for {components} components, got {}",
                components * grid.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RealField samples"));
        }
        Ok(Self {
            grid,
            components,
            data,
        })
    }

    /// Samples `f(x, component)` at every lattice point.
    pub fn from_fn(grid: Grid, components: usize, f: impl Fn([f64; 3], usize) -> f64) -> Self {
        let len = grid.len();
        let mut data = vec![0.0; components * len];
        for c in 0..components {
            for idx in 0..len {
                data[c * len + idx] = f(grid.position(idx), c);
            }
        }
        Self {
            grid,
            components,
            data,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.grid.len();
        &mut self.data[c * len..(c + 1) * len]
    }

    /// Copies one component out as a scalar field.
    pub fn extract(&self, c: usize) -> RealField {
        RealField {
            grid: self.grid,
            components: 1,
            data: self.component(c).to_vec(),
        }
    }

    /// Concatenates the components of several fields on the same grid.
    pub fn stack(parts: &[&RealField]) -> Result<RealField> {
        let grid = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero fields".into()))?
            .grid();
        let mut data = Vec::new();
        let mut components = 0;
        for p in parts {
            grid.check_same(p.grid())?;
            data.extend_from_slice(&p.data);
            components += p.components;
        }
        Ok(RealField {
            grid,
            components,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealField {
        RealField {
            grid: self.grid,
            components: self.components,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> RealField {
        self.map(|v| v * s)
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &RealField) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn mean(&self, c: usize) -> f64 {
        let s = self.component(c);
        s.iter().sum::<f64>() / s.len() as f64
    }

    /// Field with every component's mean removed.
    pub fn without_mean(&self) -> RealField {
        let mut out = self.clone();
        for c in 0..self.components {
            let m = self.mean(c);
            out.component_mut(c).iter_mut().for_each(|v| *v -= m);
        }
        out
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Pointwise Euclidean magnitude over components.
    pub fn magnitude(&self) -> RealField {
        let len = self.grid.len();
        let mut out = vec![0.0; len];
        for c in 0..self.components {
            for (o, v) in out.iter_mut().zip(self.component(c)) {
                *o += v * v;
            }
        }
        out.iter_mut().for_each(|v| *v = v.sqrt());
        RealField {
            grid: self.grid,
            components: 1,
            data: out,
        }
    }

    /// Pointwise product, broadcasting a scalar factor over components.
    /// No truncation is applied.
    pub fn pointwise_mul(&self, other: &RealField) -> Result<RealField> {
        self.grid.check_same(other.grid())?;
        let len = self.grid.len();
        let (a, b) = if self.components == 1 {
            (other, self)
        } else {
            (self, other)
        };
        if b.components != 1 && b.components != a.components {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {} by {} components",
                a.components, b.components
            )));
        }
        let mut out = a.clone();
        for c in 0..a.components {
            let bc = if b.components == 1 { 0 } else { c };
            let rhs = &b.data[bc * len..(bc + 1) * len];
            for (x, y) in out.component_mut(c).iter_mut().zip(rhs) {
                *x *= y;
            }
        }
        Ok(out)
    }

    pub fn forward(&self) -> SpectralField {
        forward(self)
    }
}

impl Add<&RealField> for &RealField {
    type Output = RealField;
    fn add(self, rhs: &RealField) -> RealField {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub<&RealField> for &RealField {
    type Output = RealField;
    fn sub(self, rhs: &RealField) -> RealField {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&RealField> for RealField {
    fn add_assign(&mut self, rhs: &RealField) {
        assert_eq!(self.data.len(), rhs.data.len(), "field shapes differ");
        self.data
            .iter_mut()
            .zip(&rhs.data)
            .for_each(|(a, b)| *a += b);
    }
}

impl SubAssign<&RealField> for RealField {
    fn sub_assign(&mut self, rhs: &RealField) {
        assert_eq!(self.data.len(), rhs.data.len(), "field shapes differ");
        self.data
            .iter_mut()
            .zip(&rhs.data)
            .for_each(|(a, b)| *a -= b);
    }
}

impl Mul<f64> for &RealField {
    type Output = RealField;
    fn mul(self, rhs: f64) -> RealField {
        self.scaled(rhs)
    }
}

/// Fourier coefficients of a field, one full FFT array per component.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    components: usize,
    data: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: Grid, components: usize) -> Self {
        Self {
            grid,
            components,
            data: vec![Complex64::new(0.0, 0.0); components * grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let len = self.grid.len();
        &mut self.data[c * len..(c + 1) * len]
    }

    pub fn extract(&self, c: usize) -> SpectralField {
        SpectralField {
            grid: self.grid,
            components: 1,
            data: self.component(c).to_vec(),
        }
    }

    pub fn stack(parts: &[&SpectralField]) -> Result<SpectralField> {
        let grid = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero fields".into()))?
            .grid();
        let mut data = Vec::new();
        let mut components = 0;
        for p in parts {
            grid.check_same(p.grid())?;
            data.extend_from_slice(&p.data);
            components += p.components;
        }
        Ok(SpectralField {
            grid,
            components,
            data,
        })
    }

    /// Coefficient of integer frequency `m` in component `c`.
    pub fn coef(&self, c: usize, m: [i64; 3]) -> Complex64 {
        self.component(c)[self.grid.mode_index(m)]
    }

    pub fn set_coef(&mut self, c: usize, m: [i64; 3], v: Complex64) {
        let idx = self.grid.mode_index(m);
        self.component_mut(c)[idx] = v;
    }

    /// Multiplies every coefficient by `mult(idx)` (same factor on all components).
    pub fn apply_multiplier(&self, mult: impl Fn(usize) -> f64) -> SpectralField {
        let mut out = self.clone();
        let len = self.grid.len();
        for c in 0..self.components {
            for (idx, v) in out.data[c * len..(c + 1) * len].iter_mut().enumerate() {
                *v *= mult(idx);
            }
        }
        out
    }

    /// Zeroes modes outside a mask.
    pub fn masked(&self, mask: &[bool]) -> SpectralField {
        let mut out = self.clone();
        let len = self.grid.len();
        for c in 0..self.components {
            for (v, &keep) in out.data[c * len..(c + 1) * len].iter_mut().zip(mask) {
                if !keep {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
        }
        out
    }

    /// Two-thirds-rule truncation.
    pub fn dealiased(&self) -> SpectralField {
        let modes = self.grid.modes();
        self.masked(&modes.dealiased)
    }

    /// Drops the Nyquist planes.
    pub fn resolved(&self) -> SpectralField {
        let modes = self.grid.modes();
        self.masked(&modes.resolved)
    }

    /// The same trigonometric polynomial on another grid of equal dimension
    /// and period: resolved modes are copied, modes the target cannot hold
    /// are dropped.
    pub fn resample(&self, target: Grid) -> Result<SpectralField> {
        if target.dim() != self.grid.dim() || target.period() != self.grid.period() {
            return Err(Error::ShapeMismatch(format!(
                "cannot resample {:?} onto {:?}",
                self.grid, target
            )));
        }
        let modes = self.grid.modes();
        let limit = target.cutoff() as i64;
        let mut out = SpectralField::zeros(target, self.components);
        for c in 0..self.components {
            for (idx, m) in modes.freq.iter().enumerate() {
                if modes.resolved[idx] && m.iter().all(|v| v.abs() <= limit) {
                    out.set_coef(c, *m, self.component(c)[idx]);
                }
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y * a;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// `volume * sum |coef|^2`, the squared L2 norm by Parseval.
    pub fn energy(&self) -> f64 {
        self.grid.volume() * self.data.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    pub fn to_real(&self) -> RealField {
        inverse(self)
    }
}

impl Add<&SpectralField> for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub<&SpectralField> for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

/// Forward transform with `1/M` normalisation.
pub fn forward(f: &RealField) -> SpectralField {
    let grid = f.grid;
    let len = grid.len();
    let scale = 1.0 / len as f64;
    let mut data: Vec<Complex64> = f.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for c in 0..f.components {
        let chunk = &mut data[c * len..(c + 1) * len];
        fft_nd(&grid, chunk, false);
        chunk.iter_mut().for_each(|v| *v *= scale);
    }
    SpectralField {
        grid,
        components: f.components,
        data,
    }
}

/// Inverse transform; the imaginary part (round-off for Hermitian data) is dropped.
pub fn inverse(f: &SpectralField) -> RealField {
    let grid = f.grid;
    let len = grid.len();
    let mut data = f.data.clone();
    for c in 0..f.components {
        fft_nd(&grid, &mut data[c * len..(c + 1) * len], true);
    }
    RealField {
        grid,
        components: f.components,
        data: data.into_iter().map(|v| v.re).collect(),
    }
}

/// Forward transform that rejects non-finite input.
pub fn checked_forward(f: &RealField) -> Result<SpectralField> {
    if !f.is_finite() {
        return Err(Error::NonFinite("transform input"));
    }
    Ok(forward(f))
}

/// Spectral differential operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Gradient,
    Divergence,
    Curl,
    Laplacian,
    Partial(usize),
}

/// Applies an exact Fourier multiplier; output Nyquist planes are zero.
///
/// The gradient of a vector field is the matrix field `∂_j f_i` stored at
/// component `i * dim + j`.
pub fn differentiate(f: &SpectralField, kind: Derivative) -> Result<SpectralField> {
    let grid = f.grid;
    let dim = grid.dim;
    let modes = grid.modes();
    let len = grid.len();
    let i = Complex64::new(0.0, 1.0);
    match kind {
        Derivative::Partial(axis) => {
            if axis >= dim {
                return Err(Error::InvalidArgument(format!(
                    "axis {axis} out of range for dim {dim}"
                )));
            }
            let mut out = SpectralField::zeros(grid, f.components);
            for c in 0..f.components {
                let src = f.component(c);
                let dst = out.component_mut(c);
                for idx in 0..len {
                    if modes.resolved[idx] {
                        dst[idx] = i * modes.wavevector[idx][axis] * src[idx];
                    }
                }
            }
            Ok(out)
        }
        Derivative::Gradient => {
            let mut out = SpectralField::zeros(grid, f.components * dim);
            for c in 0..f.components {
                let src = f.component(c);
                for a in 0..dim {
                    let dst = out.component_mut(c * dim + a);
                    for idx in 0..len {
                        if modes.resolved[idx] {
                            dst[idx] = i * modes.wavevector[idx][a] * src[idx];
                        }
                    }
                }
            }
            Ok(out)
        }
        Derivative::Divergence => {
            if f.components != dim {
                return Err(Error::ShapeMismatch(format!(
                    "divergence needs {dim} components, got {}",
                    f.components
                )));
            }
            let mut out = SpectralField::zeros(grid, 1);
            for a in 0..dim {
                let src = f.component(a);
                let dst = out.component_mut(0);
                for idx in 0..len {
                    if modes.resolved[idx] {
                        dst[idx] += i * modes.wavevector[idx][a] * src[idx];
                    }
                }
            }
            Ok(out)
        }
        Derivative::Curl => {
            if dim != 3 || f.components != 3 {
                return Err(Error::ShapeMismatch(format!(
                    "curl needs a 3-component field in 3 dimensions, got {} components in dim {dim}",
                    f.components
                )));
            }
            let mut out = SpectralField::zeros(grid, 3);
            let (fx, fy, fz) = (f.component(0), f.component(1), f.component(2));
            for idx in 0..len {
                if !modes.resolved[idx] {
                    continue;
                }
                let k = modes.wavevector[idx];
                let cx = i * (k[1] * fz[idx] - k[2] * fy[idx]);
                let cy = i * (k[2] * fx[idx] - k[0] * fz[idx]);
                let cz = i * (k[0] * fy[idx] - k[1] * fx[idx]);
                out.data[idx] = cx;
                out.data[len + idx] = cy;
                out.data[2 * len + idx] = cz;
            }
            Ok(out)
        }
        Derivative::Laplacian => {
            let mut out = SpectralField::zeros(grid, f.components);
            for c in 0..f.components {
                let src = f.component(c);
                let dst = out.component_mut(c);
                for idx in 0..len {
                    if modes.resolved[idx] {
                        // accumulate per axis so that div(grad f) agrees bit for bit
                        let k = modes.wavevector[idx];
                        let mut acc = Complex64::new(0.0, 0.0);
                        for &ka in k.iter().take(dim) {
                            acc += i * ka * (i * ka * src[idx]);
                        }
                        dst[idx] = acc;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// `‖f‖_{L^p}` by the uniform-grid Riemann sum `(volume/M sum |f|^p)^{1/p}`;
/// vector fields use the pointwise Euclidean magnitude. `p = f64::INFINITY`
/// gives the max norm.
pub fn lp_norm(f: &RealField, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "Lebesgue exponent must be >= 1, got {p}"
        )));
    }
    let mag = if f.components == 1 {
        f.map(f64::abs)
    } else {
        f.magnitude()
    };
    if p.is_infinite() {
        return Ok(mag.max_abs());
    }
    let grid = f.grid;
    let w = grid.volume() / grid.len() as f64;
    let sum: f64 = if p == 2.0 {
        mag.data.iter().map(|v| v * v).sum()
    } else if p == 1.0 {
        mag.data.iter().sum()
    } else {
        mag.data.iter().map(|v| v.powf(p)).sum()
    };
    Ok((w * sum).powf(1.0 / p))
}

/// `‖f‖_{L^2}` shortcut.
pub fn l2_norm(f: &RealField) -> f64 {
    lp_norm(f, 2.0).expect("p = 2 is valid")
}

/// Product evaluated in physical space after two-thirds truncation of both
/// factors, truncated again afterwards. A scalar factor broadcasts over the
/// components of the other; otherwise component counts must agree.
pub fn dealias_product(f: &SpectralField, g: &SpectralField) -> Result<SpectralField> {
    f.grid.check_same(&g.grid)?;
    let fr = f.dealiased().to_real();
    let gr = g.dealiased().to_real();
    Ok(fr.pointwise_mul(&gr)?.forward().dealiased())
}

/// Gradient of a real field returned in physical space (`∂_j f_i` at `i*dim + j`).
pub fn gradient_real(f: &SpectralField) -> RealField {
    differentiate(f, Derivative::Gradient)
        .expect("gradient is always defined")
        .to_real()
}
