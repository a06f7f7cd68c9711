//! Homogeneous Littlewood–Paley decomposition on the torus.
//!
//! The dyadic multiplier is built from the smooth step
//! `ψ(s) = h(s) / (h(s) + h(1 - s))`, `h(s) = e^{-1/s}` for `s > 0`:
//! `χ(ξ) = ψ((4/3 - |ξ|) / (4/3 - 3/4))` equals 1 on `|ξ| <= 3/4` and 0 on
//! `|ξ| >= 4/3`, and `φ(ξ) = χ(ξ/2) - χ(ξ)` is supported in `3/4 <= |ξ| <= 8/3`.
//! The sum over shells telescopes, so it is 1 on every nonzero resolved
//! frequency once the shell range covers the lattice.
//!
//! All infinite sums over `j ∈ ℤ` become finite sums over `[j_min, j_max]`.

use crate::error::{Error, Result};
use crate::mhd::{forced_solution, Propagator};
use crate::spectral::{dealias_product, forward, lp_norm, Grid, RealField, SpectralField};

fn smooth_h(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let a = smooth_h(s);
    a / (a + smooth_h(1.0 - s))
}

/// Low-frequency cutoff `χ(|ξ|)`.
pub fn chi(r: f64) -> f64 {
    smooth_step((4.0 / 3.0 - r) / (4.0 / 3.0 - 3.0 / 4.0))
}

/// Dyadic annulus multiplier `φ(|ξ|) = χ(|ξ|/2) - χ(|ξ|)`.
pub fn phi(r: f64) -> f64 {
    chi(0.5 * r) - chi(r)
}

/// Which dyadic operator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// `Δ_j`
    Delta,
    /// `S_j = Σ_{k <= j-1} Δ_k` plus the mean mode.
    SLow,
}

/// Tabulated multipliers `φ(2^{-j} ξ)` for every shell and every stored mode.
#[derive(Debug, Clone)]
pub struct DyadicFamily {
    grid: Grid,
    j_min: i32,
    j_max: i32,
    table: Vec<Vec<f64>>,
}

impl DyadicFamily {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.cutoff() < 3 {
            return Err(Error::InvalidGrid(format!(
                "cutoff {} too small for dyadic shells",
                grid.cutoff()
            )));
        }
        let k_min = grid.base_wavenumber();
        // largest j with χ(2^{-j} k_min) = 0, never above -1
        let j_min = ((k_min * 3.0 / 4.0).log2().floor() as i32).min(-1);
        let k_max = (grid.dim() as f64).sqrt() * grid.cutoff() as f64 * k_min;
        let j_max = (k_max.log2().ceil() as i32 + 1).max(j_min + 2);
        let modes = grid.modes();
        let mut table = Vec::with_capacity((j_max - j_min + 1) as usize);
        for j in j_min..=j_max {
            let scale = 2f64.powi(-j);
            let row = (0..grid.len())
                .map(|idx| {
                    if idx == 0 || !modes.resolved[idx] {
                        0.0
                    } else {
                        phi(scale * modes.k2[idx].sqrt())
                    }
                })
                .collect();
            table.push(row);
        }
        Ok(Self {
            grid,
            j_min,
            j_max,
            table,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn j_min(&self) -> i32 {
        self.j_min
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn shells(&self) -> impl Iterator<Item = i32> {
        self.j_min..=self.j_max
    }

    pub fn shell_count(&self) -> usize {
        (self.j_max - self.j_min + 1) as usize
    }

    /// `φ(2^{-j} ξ)` per mode, or `None` outside the tabulated range.
    pub fn multiplier(&self, j: i32) -> Option<&[f64]> {
        if j < self.j_min || j > self.j_max {
            None
        } else {
            Some(&self.table[(j - self.j_min) as usize])
        }
    }

    /// `Σ_{k <= j-1} φ(2^{-k} ξ)` with the mean mode set to 1.
    pub fn low_multiplier(&self, j: i32) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        out[0] = 1.0;
        for k in self.j_min..j.min(self.j_max + 1) {
            for (o, v) in out.iter_mut().zip(&self.table[(k - self.j_min) as usize]) {
                *o += v;
            }
        }
        out
    }

    /// Applies `Δ_j` or `S_j` to a spectral field.
    pub fn block(&self, f: &SpectralField, j: i32, which: Block) -> Result<SpectralField> {
        self.grid.check_same(f.grid())?;
        Ok(match which {
            Block::Delta => match self.multiplier(j) {
                Some(m) => f.apply_multiplier(|idx| m[idx]),
                None => SpectralField::zeros(self.grid, f.components()),
            },
            Block::SLow => {
                let m = self.low_multiplier(j);
                f.apply_multiplier(|idx| m[idx])
            }
        })
    }

    /// `‖Δ_j f‖_{L^p}` for every shell, in shell order.
    pub fn block_norms(&self, f: &RealField, p: f64) -> Result<Vec<f64>> {
        self.grid.check_same(f.grid())?;
        let spec = forward(f);
        self.block_norms_spectral(&spec, p)
    }

    pub fn block_norms_spectral(&self, spec: &SpectralField, p: f64) -> Result<Vec<f64>> {
        self.table
            .iter()
            .map(|m| lp_norm(&spec.apply_multiplier(|idx| m[idx]).to_real(), p))
            .collect()
    }
}

/// Free-standing form of [`DyadicFamily::block`].
pub fn dyadic_block(
    family: &DyadicFamily,
    f: &SpectralField,
    j: i32,
    which: Block,
) -> Result<SpectralField> {
    family.block(f, j, which)
}

/// Index set for a homogeneous Besov norm `Ḃ^s_{p,r}`, optionally weighted
/// shell by shell.
#[derive(Debug, Clone, PartialEq)]
pub struct BesovSpec {
    pub s: f64,
    pub p: f64,
    pub r: f64,
    /// One weight per shell `j_min..=j_max`.
    pub weights: Option<Vec<f64>>,
}

impl BesovSpec {
    pub fn new(s: f64, p: f64, r: f64) -> Result<Self> {
        let spec = Self {
            s,
            p,
            r,
            weights: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn weighted(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) || !(self.r >= 1.0) || !self.s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Besov indices out of range: s={}, p={}, r={}",
                self.s, self.p, self.r
            )));
        }
        Ok(())
    }
}

fn lr_sum(terms: impl Iterator<Item = f64>, r: f64) -> f64 {
    if r.is_infinite() {
        terms.fold(0.0, f64::max)
    } else if r == 1.0 {
        terms.sum()
    } else {
        terms.map(|t| t.powf(r)).sum::<f64>().powf(1.0 / r)
    }
}

/// `(Σ_j (ω_j 2^{js} ‖Δ_j f‖_{L^p})^r)^{1/r}`.
pub fn besov_norm(family: &DyadicFamily, f: &RealField, spec: &BesovSpec) -> Result<f64> {
    spec.validate()?;
    if let Some(w) = &spec.weights {
        if w.len() != family.shell_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} shells",
                w.len(),
                family.shell_count()
            )));
        }
    }
    let norms = family.block_norms(f, spec.p)?;
    let terms = family.shells().zip(norms).enumerate().map(|(i, (j, n))| {
        let w = spec.weights.as_ref().map_or(1.0, |w| w[i]);
        w * 2f64.powf(j as f64 * spec.s) * n
    });
    Ok(lr_sum(terms, spec.r))
}

/// Hybrid norm `Σ_{k<=R0} 2^{ks}‖Δ_k f‖_{L^q} + Σ_{k>R0} 2^{kt}‖Δ_k f‖_{L^p}`.
pub fn hybrid_besov_norm(
    family: &DyadicFamily,
    f: &RealField,
    s: f64,
    t: f64,
    q: f64,
    p: f64,
    r0: i32,
) -> Result<f64> {
    let low = family.block_norms(f, q)?;
    let high = if p == q {
        low.clone()
    } else {
        family.block_norms(f, p)?
    };
    let mut sum = 0.0;
    for (i, j) in family.shells().enumerate() {
        sum += if j <= r0 {
            2f64.powf(j as f64 * s) * low[i]
        } else {
            2f64.powf(j as f64 * t) * high[i]
        };
    }
    Ok(sum)
}

/// Time weight `ω_k(t) = Σ_{ℓ>=k} 2^{k-ℓ} (1 - e^{-c 2^{2ℓ} t})^{1/2}`.
///
/// The series is summed for 60 terms; the neglected tail is below `2^{-59}`.
pub fn weight_omega(k: i32, t: f64, c: f64) -> f64 {
    (0..60)
        .map(|i| {
            let l = k + i;
            let bracket = -(-c * 4f64.powi(l) * t).exp_m1();
            0.5f64.powi(i) * bracket.max(0.0).sqrt()
        })
        .sum()
}

/// `ω_j(t)` for every shell of a family.
pub fn weight_vector(family: &DyadicFamily, t: f64, c: f64) -> Vec<f64> {
    family.shells().map(|j| weight_omega(j, t, c)).collect()
}

/// A Chemin–Lerner norm value together with the largest quadrature step
/// used for its time integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeNorm {
    pub value: f64,
    pub max_step: f64,
}

fn check_series(times: &[f64], fields: &[&RealField], rho: f64) -> Result<f64> {
    if times.len() != fields.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} times for {} fields",
            times.len(),
            fields.len()
        )));
    }
    if rho.is_finite() && times.len() < 2 {
        return Err(Error::InsufficientSnapshots {
            needed: 2,
            have: times.len(),
        });
    }
    if times.is_empty() {
        return Err(Error::InsufficientSnapshots { needed: 1, have: 0 });
    }
    if !(rho >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "time exponent must be >= 1, got {rho}"
        )));
    }
    let mut max_step: f64 = 0.0;
    for w in times.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument(
                "snapshot times must increase strictly".into(),
            ));
        }
        max_step = max_step.max(w[1] - w[0]);
    }
    Ok(max_step)
}

/// `(∫ g(t)^ρ dt)^{1/ρ}` by the trapezoidal rule; `ρ = ∞` takes the max.
pub fn time_lebesgue(times: &[f64], values: &[f64], rho: f64) -> f64 {
    if rho.is_infinite() {
        return values.iter().copied().fold(0.0, f64::max);
    }
    let mut acc = 0.0;
    for i in 1..times.len() {
        let dt = times[i] - times[i - 1];
        let (a, b) = if rho == 1.0 {
            (values[i - 1], values[i])
        } else {
            (values[i - 1].powf(rho), values[i].powf(rho))
        };
        acc += 0.5 * dt * (a + b);
    }
    if rho == 1.0 {
        acc
    } else {
        acc.powf(1.0 / rho)
    }
}

/// `‖u‖_{L̃^ρ_T(Ḃ^s_{p,1})} = Σ_q 2^{qs} (∫_0^T ‖Δ_q u‖_{L^p}^ρ dt)^{1/ρ}`.
pub fn chemin_lerner_norm(
    family: &DyadicFamily,
    times: &[f64],
    fields: &[&RealField],
    s: f64,
    p: f64,
    rho: f64,
) -> Result<TimeNorm> {
    let max_step = check_series(times, fields, rho)?;
    let per_time: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| family.block_norms(f, p))
        .collect::<Result<_>>()?;
    Ok(TimeNorm {
        value: chemin_lerner_from_blocks(family, times, &per_time, s, rho),
        max_step,
    })
}

/// Chemin–Lerner norm from precomputed block norms (`blocks[time][shell]`).
pub fn chemin_lerner_from_blocks(
    family: &DyadicFamily,
    times: &[f64],
    blocks: &[Vec<f64>],
    s: f64,
    rho: f64,
) -> f64 {
    let mut total = 0.0;
    let mut series = vec![0.0; times.len()];
    for (i, j) in family.shells().enumerate() {
        for (v, b) in series.iter_mut().zip(blocks) {
            *v = b[i];
        }
        total += 2f64.powf(j as f64 * s) * time_lebesgue(times, &series, rho);
    }
    total
}

/// `‖u‖_{L^ρ_T(Ḃ^s_{p,1})}`, the norm integrated after summing shells.
pub fn lebesgue_besov_norm(
    family: &DyadicFamily,
    times: &[f64],
    fields: &[&RealField],
    s: f64,
    p: f64,
    rho: f64,
) -> Result<TimeNorm> {
    let max_step = check_series(times, fields, rho)?;
    let spec = BesovSpec::new(s, p, 1.0)?;
    let values: Vec<f64> = fields
        .iter()
        .map(|f| besov_norm(family, f, &spec))
        .collect::<Result<_>>()?;
    Ok(TimeNorm {
        value: time_lebesgue(times, &values, rho),
        max_step,
    })
}

/// Both sides of the smoothing estimate for `∂_t v - νΔv = f` with
/// time-independent `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatEstimate {
    /// `‖v‖_{L̃¹_T(Ḃ^{s+2}_{p,1})}`
    pub smoothed: f64,
    /// `‖v₀‖_{Ḃ^s_{p,1}} + ‖f‖_{L̃¹_T(Ḃ^s_{p,1})}`
    pub data: f64,
    pub ratio: f64,
    pub max_step: f64,
}

/// Evaluates the heat smoothing estimate on the exact solution sampled at
/// `times` (starting at 0).
pub fn heat_estimate(
    family: &DyadicFamily,
    v0: &RealField,
    f: &RealField,
    nu: f64,
    times: &[f64],
    s: f64,
    p: f64,
) -> Result<HeatEstimate> {
    if times.first() != Some(&0.0) {
        return Err(Error::InvalidArgument(
            "heat estimate times must start at 0".into(),
        ));
    }
    let v0s = forward(v0);
    let fs = forward(f);
    let path: Vec<RealField> = times
        .iter()
        .map(|&t| forced_solution(&v0s, &fs, t, Propagator::Heat { nu }).map(|v| v.to_real()))
        .collect::<Result<_>>()?;
    let refs: Vec<&RealField> = path.iter().collect();
    let smoothed = chemin_lerner_norm(family, times, &refs, s + 2.0, p, 1.0)?;
    let forcing = chemin_lerner_norm(family, times, &vec![f; times.len()], s, p, 1.0)?;
    let data = besov_norm(family, v0, &BesovSpec::new(s, p, 1.0)?)? + forcing.value;
    Ok(HeatEstimate {
        smoothed: smoothed.value,
        data,
        ratio: smoothed.value / data,
        max_step: smoothed.max_step,
    })
}

/// Bony decomposition of a product.
#[derive(Debug, Clone)]
pub struct BonyParts {
    /// `T_u v = Σ_q S_{q-1}u Δ_q v`
    pub tuv: RealField,
    /// `T_v u`
    pub tvu: RealField,
    /// `R(u, v) = Σ_q Δ_q u (Δ_{q-1} + Δ_q + Δ_{q+1}) v`
    pub remainder: RealField,
    /// `mean(u) mean(v)`, the only part of `uv` the three pieces omit.
    pub mean_product: f64,
}

impl BonyParts {
    /// `T_u v + T_v u + R(u, v) + mean(u) mean(v)`.
    pub fn reconstruct(&self) -> RealField {
        let mut out = &self.tuv + &self.tvu;
        out += &self.remainder;
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v += self.mean_product);
        out
    }
}

/// Paraproducts and remainder of two scalar fields. Every product is a
/// two-thirds dealiased product, exact when both inputs lie in the
/// one-third ball.
pub fn bony_decompose(family: &DyadicFamily, u: &RealField, v: &RealField) -> Result<BonyParts> {
    family.grid.check_same(u.grid())?;
    family.grid.check_same(v.grid())?;
    if u.components() != 1 || v.components() != 1 {
        return Err(Error::ShapeMismatch(
            "Bony decomposition takes scalar fields".into(),
        ));
    }
    let us = forward(u);
    let vs = forward(v);
    let deltas_u: Vec<SpectralField> = family
        .shells()
        .map(|j| family.block(&us, j, Block::Delta))
        .collect::<Result<_>>()?;
    let deltas_v: Vec<SpectralField> = family
        .shells()
        .map(|j| family.block(&vs, j, Block::Delta))
        .collect::<Result<_>>()?;
    let grid = family.grid;
    let mut tuv = SpectralField::zeros(grid, 1);
    let mut tvu = SpectralField::zeros(grid, 1);
    let mut rem = SpectralField::zeros(grid, 1);
    let count = deltas_u.len();
    for (i, q) in family.shells().enumerate() {
        let su = family.block(&us, q - 1, Block::SLow)?;
        let sv = family.block(&vs, q - 1, Block::SLow)?;
        tuv.axpy(1.0, &dealias_product(&su, &deltas_v[i])?);
        tvu.axpy(1.0, &dealias_product(&sv, &deltas_u[i])?);
        let mut tilde = deltas_v[i].clone();
        if i > 0 {
            tilde.axpy(1.0, &deltas_v[i - 1]);
        }
        if i + 1 < count {
            tilde.axpy(1.0, &deltas_v[i + 1]);
        }
        rem.axpy(1.0, &dealias_product(&deltas_u[i], &tilde)?);
    }
    Ok(BonyParts {
        tuv: tuv.to_real(),
        tvu: tvu.to_real(),
        remainder: rem.to_real(),
        mean_product: us.component(0)[0].re * vs.component(0)[0].re,
    })
}

/// Homogeneous Sobolev norm `(volume Σ_{k≠0} |k|^{2σ} |coef(k)|^2)^{1/2}`;
/// the mean mode is always excluded.
pub fn hs_norm(f: &RealField, sigma: f64) -> f64 {
    let spec = forward(f);
    let grid = *f.grid();
    let modes = grid.modes();
    let mut acc = 0.0;
    for c in 0..f.components() {
        for (idx, v) in spec.component(c).iter().enumerate().skip(1) {
            acc += modes.k2[idx].powf(sigma) * v.norm_sqr();
        }
    }
    (grid.volume() * acc).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{differentiate, Derivative};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: Grid, seed: u64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        RealField::from_vec(grid, 1, data).unwrap()
    }

    #[test]
    fn shell_range_for_standard_grids() {
        let fam = DyadicFamily::new(Grid::standard(3, 32).unwrap()).unwrap();
        assert_eq!(fam.j_min(), -1);
        // sqrt(3) * 15 ≈ 25.98 -> ceil(log2) = 5, +1
        assert_eq!(fam.j_max(), 6);
        assert!(DyadicFamily::new(Grid::standard(1, 8).unwrap()).is_ok());
    }

    #[test]
    fn phi_support_and_range() {
        assert_eq!(phi(0.5), 0.0);
        assert_eq!(phi(3.0), 0.0);
        assert_eq!(phi(0.75), 0.0);
        assert_eq!(phi(8.0 / 3.0), 0.0);
        for i in 0..=400 {
            let r = i as f64 * 0.01;
            let v = phi(r);
            assert!((0.0..=1.0).contains(&v));
        }
        assert_relative_eq!(chi(0.5), 1.0);
        assert_relative_eq!(chi(1.5), 0.0);
    }

    #[test]
    fn partition_at_unit_frequency() {
        let fam = DyadicFamily::new(Grid::standard(3, 16).unwrap()).unwrap();
        let idx = fam.grid().mode_index([1, 0, 0]);
        let s: f64 = fam.shells().map(|j| fam.multiplier(j).unwrap()[idx]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_field_blocks_vanish() {
        let g = Grid::standard(2, 16).unwrap();
        let fam = DyadicFamily::new(g).unwrap();
        let z = SpectralField::zeros(g, 1);
        for j in fam.shells() {
            assert_eq!(fam.block(&z, j, Block::Delta).unwrap().max_abs(), 0.0);
        }
    }

    #[test]
    fn single_mode_at_power_of_two_hits_three_shells() {
        let g = Grid::standard(2, 32).unwrap();
        let fam = DyadicFamily::new(g).unwrap();
        let q = 3;
        let u = RealField::from_fn(g, 1, |x, _| (8.0 * x[0]).cos());
        let us = forward(&u);
        let mut sum = SpectralField::zeros(g, 1);
        for j in fam.shells() {
            let b = fam.block(&us, j, Block::Delta).unwrap();
            if (j - q).abs() > 1 {
                assert!(b.max_abs() < 1e-15, "shell {j} should vanish");
            }
            sum.axpy(1.0, &b);
        }
        assert!((&sum.to_real() - &u).max_abs() < 1e-13);
    }

    #[test]
    fn s_low_keeps_constants() {
        let g = Grid::standard(2, 16).unwrap();
        let fam = DyadicFamily::new(g).unwrap();
        let c = forward(&RealField::constant(g, &[2.5]));
        for j in fam.shells() {
            let s = fam.block(&c, j, Block::SLow).unwrap().to_real();
            assert!(s.data().iter().all(|v| (v - 2.5).abs() < 1e-14));
        }
    }

    #[test]
    fn besov_of_constant_is_zero() {
        let g = Grid::standard(2, 16).unwrap();
        let fam = DyadicFamily::new(g).unwrap();
        let spec = BesovSpec::new(1.0, 2.0, 1.0).unwrap();
        let c = RealField::constant(g, &[4.0]);
        assert!(besov_norm(&fam, &c, &spec).unwrap() < 1e-13);
    }

    #[test]
    fn besov_of_cos4_matches_block_oracle() {
        let g = Grid::standard(3, 16).unwrap();
        let fam = DyadicFamily::new(g).unwrap();
        let f = RealField::from_fn(g, 1, |x, _| (4.0 * x[0]).cos());
        let spec = BesovSpec::new(1.0, 2.0, 1.0).unwrap();
        // each shell of a single mode is phi(2^-j 4) cos(4 x1)
        let l2 = lp_norm(&f, 2.0).unwrap();
        let mut weights = 0.0;
        let mut oracle = 0.0;
        for j in 1..=3 {
            let w = phi(4.0 * 2f64.powi(-j));
            weights += w;
            oracle += 2f64.powi(j) * w * l2;
        }
        assert!((weights - 1.0).abs() < 1e-12);
        assert_relative_eq!(
            besov_norm(&fam, &f, &spec).unwrap(),
            oracle,
            max_relative = 1e-12
        );
    }

    #[test]
    fn hybrid_collapses_to_besov() {
        let g = Grid::standard(2, 16).unwrap();
        let fam = DyadicFamily::new(g).unwrap();
        let f = random_field(g, 4);
        let b = besov_norm(&fam, &f, &BesovSpec::new(0.5, 2.0, 1.0).unwrap()).unwrap();
        let h = hybrid_besov_norm(&fam, &f, 0.5, 0.5, 2.0, 2.0, 0).unwrap();
        assert_relative_eq!(b, h, max_relative = 1e-14);
        // energy only above R0 = 0
        let hi = RealField::from_fn(g, 1, |x, _| (5.0 * x[0]).sin());
        let low_part = hybrid_besov_norm(&fam, &hi, 1.0, 0.0, 2.0, 2.0, 0).unwrap()
            - hybrid_besov_norm(&fam, &hi, 0.0, 0.0, 2.0, 2.0, 0).unwrap();
        assert!(low_part.abs() < 1e-12);
    }

    #[test]
    fn weight_omega_limits() {
        for k in -2..6 {
            assert_eq!(weight_omega(k, 0.0, 1.0), 0.0);
            assert!((weight_omega(k, 1e12, 1.0) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_omega_lattice_properties() {
        let ts = [0.0, 1e-4, 1e-3, 0.01, 0.1, 1.0, 10.0];
        for k in -2..8 {
            for w in ts.windows(2) {
                assert!(weight_omega(k, w[0], 0.5) <= weight_omega(k, w[1], 0.5) + 1e-15);
            }
            for &t in &ts {
                let wk = weight_omega(k, t, 0.5);
                assert!(wk <= 2.0 + 1e-15);
                for kp in -2..8 {
                    let wkp = weight_omega(kp, t, 0.5);
                    if k >= kp {
                        assert!(wk <= 2f64.powi(k - kp) * wkp + 1e-14);
                    } else {
                        assert!(wk <= 3.0 * wkp + 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn weighted_besov_scales_terms() {
        let g = Grid::standard(2, 16).unwrap();
        let fam = DyadicFamily::new(g).unwrap();
        let f = random_field(g, 9);
        let ones = vec![1.0; fam.shell_count()];
        let base = BesovSpec::new(0.0, 2.0, 1.0).unwrap();
        let plain = besov_norm(&fam, &f, &base).unwrap();
        let w1 = besov_norm(&fam, &f, &base.clone().weighted(ones)).unwrap();
        assert_relative_eq!(plain, w1);
        let twos = vec![2.0; fam.shell_count()];
        assert_relative_eq!(
            besov_norm(&fam, &f, &base.clone().weighted(twos)).unwrap(),
            2.0 * plain,
            max_relative = 1e-14
        );
        assert!(besov_norm(&fam, &f, &base.weighted(vec![1.0])).is_err());
    }

    #[test]
    fn chemin_lerner_constant_in_time() {
        let g = Grid::standard(2, 16).unwrap();
        let fam = DyadicFamily::new(g).unwrap();
        let f = random_field(g, 2);
        let times = [0.0, 0.1, 0.25, 0.5];
        let fields = vec![&f; 4];
        let cl = chemin_lerner_norm(&fam, &times, &fields, 0.5, 2.0, 1.0).unwrap();
        let b = besov_norm(&fam, &f, &BesovSpec::new(0.5, 2.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(cl.value, 0.5 * b, max_relative = 1e-13);
        assert_relative_eq!(cl.max_step, 0.25);
        let z = RealField::zeros(g, 1);
        let zero = chemin_lerner_norm(&fam, &times, &[&z; 4], 0.0, 2.0, 2.0).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(chemin_lerner_norm(&fam, &[0.0], &[&f], 0.0, 2.0, 1.0).is_err());
        assert!(chemin_lerner_norm(&fam, &[0.0], &[&f], 0.0, 2.0, f64::INFINITY).is_ok());
    }

    #[test]
    fn hs_norm_cases() {
        let g = Grid::standard(3, 16).unwrap();
        let f = random_field(g, 5);
        assert_relative_eq!(
            hs_norm(&f, 0.0),
            lp_norm(&f.without_mean(), 2.0).unwrap(),
            max_relative = 1e-12
        );
        let a = 1.0 / lp_norm(&RealField::from_fn(g, 1, |x, _| (2.0 * x[0]).cos()), 2.0).unwrap();
        let m = RealField::from_fn(g, 1, |x, _| a * (2.0 * x[0]).cos());
        assert_relative_eq!(hs_norm(&m, -0.5), 2f64.powf(-0.5), max_relative = 1e-12);
        assert_eq!(hs_norm(&RealField::zeros(g, 1), 1.0), 0.0);
    }

    #[test]
    fn bernstein_scaling_in_one_shell() {
        let g = Grid::standard(2, 64).unwrap();
        let fam = DyadicFamily::new(g).unwrap();
        let u = forward(&random_field(g, 11));
        for j in 0..=4 {
            let b = fam.block(&u, j, Block::Delta).unwrap();
            let n0 = lp_norm(&b.to_real(), 2.0).unwrap();
            let n1 = lp_norm(
                &differentiate(&b, Derivative::Gradient).unwrap().to_real(),
                2.0,
            )
            .unwrap();
            let ratio = n1 / n0;
            let scale = 2f64.powi(j);
            assert!(
                ratio >= 0.75 * scale - 1e-12 && ratio <= 8.0 / 3.0 * scale + 1e-12,
                "shell {j}: {ratio}"
            );
        }
    }
}
