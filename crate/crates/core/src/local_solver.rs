//! Local existence by Picard iteration in Lagrangian coordinates.
//!
//! Iterates `(v, b)` are sampled on a uniform time grid and live in
//! Lagrangian coordinates, so the flow map of `v` is `X = y + ∫₀ᵗ v`. The map
//! `Φ(v, b) = (u_L + û, B_L + B̂)` solves
//!
//! ```text
//! ∂ₜû = ρ₀⁻¹ Lamé(û) + (ρ₀⁻¹ − ρ̄⁻¹) Lamé(u_L) + ρ₀⁻¹ div(I₂ + I₃ − I₄ + I₅ − I₆)
//! ∂ₜB̂ = νΔB̂ + I₇ + div(I₈ + I₉ + I₁₀) + I₁₁
//! ```
//!
//! with zero data, where `Lamé = μΔ + (λ+μ)∇div` and the sources are
//! evaluated on `(v, b)`. Matrix conventions follow [`crate::lagrangian`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lagrangian::{
    inverse_displacement, matmul, matrix_divergence, matvec, outer, push_forward_with,
    scalar_identity, FlowMap,
};
use crate::littlewood_paley::{
    besov_norm, chemin_lerner_from_blocks, time_lebesgue, BesovSpec, DyadicFamily,
};
use crate::mhd::{apply_symbol, phi1, phi2, propagate, PhysParams, Propagator, State};
use crate::spectral::{
    differentiate, forward, l2_norm, Derivative, Grid, RealField, SpectralField,
};

/// Settings of a Picard run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PicardConfig {
    /// Ball radius `R`.
    pub radius: f64,
    /// Horizon `T`.
    pub horizon: f64,
    pub max_iterations: usize,
    /// Inner time step; rounded so that `T` is a whole number of steps.
    pub dt: f64,
    /// Lebesgue index of the Besov norms, in `[2, 2·dim)`.
    pub p: f64,
    /// Relative tolerance on the `E_p` norm of successive differences.
    pub tolerance: f64,
    /// Constant `C` in the time-bound conditions.
    pub c_const: f64,
    /// `η` in `(1+‖a₀‖)²R ≤ η < 1/(20C)`.
    pub eta: f64,
    /// Frequency cut `m` of `C_{ρ₀,m}`; `None` uses the top shell.
    pub m: Option<i32>,
    /// `c̄` in the existence time.
    pub c_bar: f64,
    /// Threshold `c < 1` of `∫₀ᵀ ‖∇v‖_{Ḃ^{N/p}_{p,1}} ≤ c`.
    pub small_c: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            horizon: 0.1,
            max_iterations: 25,
            dt: 0.005,
            p: 4.0,
            tolerance: 1e-8,
            c_const: 1.0,
            eta: 1e-3,
            m: None,
            c_bar: 1e-2,
            small_c: 0.5,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let positive = [
            self.radius,
            self.horizon,
            self.dt,
            self.tolerance,
            self.c_const,
            self.eta,
            self.c_bar,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParams(
                "R, T, dt, tolerance, C, eta and c_bar must be positive".into(),
            ));
        }
        if !(self.p >= 2.0 && self.p < 2.0 * dim as f64) {
            return Err(Error::InvalidParams(format!(
                "p = {} must lie in [2, {})",
                self.p,
                2 * dim
            )));
        }
        if !(self.small_c > 0.0 && self.small_c < 1.0) {
            return Err(Error::InvalidParams("small_c must lie in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParams(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Time levels `t_n = n·T/steps` with at least two steps.
    pub fn time_grid(&self) -> Vec<f64> {
        let steps = ((self.horizon / self.dt).round() as usize).max(2);
        (0..=steps)
            .map(|n| self.horizon * n as f64 / steps as f64)
            .collect()
    }
}

/// `T = c̄ / (1 + ‖a₀‖)⁴`.
pub fn existence_time(a0_besov_norm: f64, c_bar: f64) -> f64 {
    c_bar / (1.0 + a0_besov_norm).powi(4)
}

/// `C_{ρ₀,m} ≈ C·T·2^{2m}‖a₀‖²`.
pub fn c_rho_m(c_const: f64, horizon: f64, m: i32, a0_besov_norm: f64) -> f64 {
    c_const * horizon * 4f64.powi(m) * a0_besov_norm * a0_besov_norm
}

/// Free solutions `u_L = e^{tL/ρ̄} u₀` (Lamé) and `B_L = e^{tνΔ} B₀` at each time.
pub fn free_solutions(
    u0: &RealField,
    b0: &RealField,
    params: &PhysParams,
    times: &[f64],
) -> Result<(Vec<RealField>, Vec<RealField>)> {
    let lame = Propagator::Lame {
        mu: params.mu / params.rho_bar,
        lambda: params.lambda / params.rho_bar,
    };
    let heat = Propagator::Heat { nu: params.nu };
    let (us, bs) = (forward(u0), forward(b0));
    let mut ul = Vec::with_capacity(times.len());
    let mut bl = Vec::with_capacity(times.len());
    for &t in times {
        ul.push(propagate(&us, t, lame)?.to_real());
        bl.push(propagate(&bs, t, heat)?.to_real());
    }
    Ok((ul, bl))
}

/// Second-order time derivative of a sampled path: centered inside,
/// one-sided at the ends.
pub fn time_derivative(times: &[f64], path: &[RealField]) -> Result<Vec<RealField>> {
    let n = path.len();
    if n < 3 || times.len() != n {
        return Err(Error::InsufficientSnapshots { needed: 3, have: n });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let d = if i == 0 {
            let h = times[1] - times[0];
            let mut d = path[1].scaled(4.0);
            d.axpy(-3.0, &path[0]);
            d.axpy(-1.0, &path[2]);
            d.scaled(0.5 / h)
        } else if i == n - 1 {
            let h = times[n - 1] - times[n - 2];
            let mut d = path[n - 1].scaled(3.0);
            d.axpy(-4.0, &path[n - 2]);
            d.axpy(1.0, &path[n - 3]);
            d.scaled(0.5 / h)
        } else {
            (&path[i + 1] - &path[i - 1]).scaled(1.0 / (times[i + 1] - times[i - 1]))
        };
        out.push(d);
    }
    Ok(out)
}

/// Flow maps `X(t_n) = y + ∫₀^{t_n} v` by the cumulative trapezoid rule.
pub fn lagrangian_flow(times: &[f64], v: &[RealField]) -> Result<Vec<FlowMap>> {
    let grid = *v[0].grid();
    let mut disp = RealField::zeros(grid, grid.dim());
    let mut maps = Vec::with_capacity(v.len());
    maps.push(FlowMap::from_displacement(disp.clone(), times[0])?);
    for i in 1..v.len() {
        let h = times[i] - times[i - 1];
        disp.axpy(0.5 * h, &v[i - 1]);
        disp.axpy(0.5 * h, &v[i]);
        maps.push(FlowMap::from_displacement(disp.clone(), times[i])?);
    }
    Ok(maps)
}

/// The eleven source fields at one time level. Matrix fields use component
/// `i*dim + j`; `I₁`, `I₇` and `I₁₁` are vectors.
#[derive(Debug, Clone)]
pub struct SourceTerms {
    /// `(1 − J)∂ₜv`
    pub i1: RealField,
    /// `(adj − Id) S(Dv·A)`, `S(M) = μ(M + Mᵀ) + λ tr(M) Id`
    pub i2: RealField,
    /// `S(Dv·(A − Id))`
    pub i3: RealField,
    /// `adj · P(ρ₀/J)`
    pub i4: RealField,
    /// `adj · b bᵀ`
    pub i5: RealField,
    /// `½ adj |b|²`
    pub i6: RealField,
    /// `(1 − J)∂ₜb`
    pub i7: RealField,
    /// `ν(adj − Id)Aᵀ(∇b)ᵀ` with `((∇b)ᵀ)_{ik} = ∂_i b_k`
    pub i8: RealField,
    /// `ν(Aᵀ − Id)(∇b)ᵀ`
    pub i9: RealField,
    /// `adj · b vᵀ`
    pub i10: RealField,
    /// `−div(adj v) b`
    pub i11: RealField,
}

fn transpose(m: &RealField) -> RealField {
    let dim = m.grid().dim();
    let mut out = RealField::zeros(*m.grid(), dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            out.component_mut(j * dim + i)
                .copy_from_slice(m.component(i * dim + j));
        }
    }
    out
}

fn minus_identity(m: &RealField) -> RealField {
    let dim = m.grid().dim();
    let mut out = m.clone();
    for i in 0..dim {
        out.component_mut(i * dim + i)
            .iter_mut()
            .for_each(|v| *v -= 1.0);
    }
    out
}

fn stress(m: &RealField, params: &PhysParams) -> RealField {
    let dim = m.grid().dim();
    let mut out = (m + &transpose(m)).scaled(params.mu);
    let mut trace = RealField::zeros(*m.grid(), 1);
    for i in 0..dim {
        for (t, v) in trace.data_mut().iter_mut().zip(m.component(i * dim + i)) {
            *t += v;
        }
    }
    out.axpy(params.lambda, &scalar_identity(&trace, dim));
    out
}

fn gradient(f: &RealField) -> Result<RealField> {
    Ok(differentiate(&forward(f), Derivative::Gradient)?.to_real())
}

/// `I₁ … I₁₁` for iterate values `(v, b)`, their time derivatives and the
/// flow map of `v` at the same time.
pub fn source_terms(
    v: &RealField,
    b: &RealField,
    dv_dt: &RealField,
    db_dt: &RealField,
    rho0: &RealField,
    fm: &FlowMap,
    params: &PhysParams,
) -> Result<SourceTerms> {
    let grid = *v.grid();
    for f in [b, dv_dt, db_dt, rho0] {
        grid.check_same(f.grid())?;
    }
    grid.check_same(fm.grid())?;
    let dim = grid.dim();
    let one_minus_j = fm.jacobian.map(|j| 1.0 - j);
    let adj_minus = minus_identity(&fm.adjugate);
    let a_minus = minus_identity(&fm.inverse);
    let a_t = transpose(&fm.inverse);

    let dv = gradient(v)?;
    let grad_b_t = transpose(&gradient(b)?);
    let rho_lagr = rho0.pointwise_mul(&fm.jacobian.map(|j| 1.0 / j))?;
    let pressure = rho_lagr.map(|r| params.pressure(r, 0));
    let b2 = b.magnitude().map(|m| 0.5 * m * m);
    let adj_v = matvec(&fm.adjugate, v);
    let div_adj_v = differentiate(&forward(&adj_v), Derivative::Divergence)?.to_real();

    Ok(SourceTerms {
        i1: dv_dt.pointwise_mul(&one_minus_j)?,
        i2: matmul(&adj_minus, &stress(&matmul(&dv, &fm.inverse), params)),
        i3: stress(&matmul(&dv, &a_minus), params),
        i4: matmul(&fm.adjugate, &scalar_identity(&pressure, dim)),
        i5: matmul(&fm.adjugate, &outer(b, b)),
        i6: matmul(&fm.adjugate, &scalar_identity(&b2, dim)),
        i7: db_dt.pointwise_mul(&one_minus_j)?,
        i8: matmul(&adj_minus, &matmul(&a_t, &grad_b_t)).scaled(params.nu),
        i9: matmul(&minus_identity(&a_t), &grad_b_t).scaled(params.nu),
        i10: matmul(&fm.adjugate, &outer(b, v)),
        i11: b.pointwise_mul(&div_adj_v)?.scaled(-1.0),
    })
}

/// Data and free solutions shared by every application of `Φ`.
#[derive(Debug, Clone)]
pub struct PicardProblem {
    pub params: PhysParams,
    pub rho0: RealField,
    pub u0: RealField,
    pub b0: RealField,
    pub times: Vec<f64>,
    pub u_free: Vec<RealField>,
    pub b_free: Vec<RealField>,
    inv_rho0: RealField,
    mean_inv_rho0: f64,
}

/// `Lamé(f) = μΔf + (λ+μ)∇div f`.
fn lame_apply(f: &SpectralField, params: &PhysParams) -> SpectralField {
    apply_symbol(
        f,
        Propagator::Lame {
            mu: params.mu,
            lambda: params.lambda,
        },
        1.0,
        |z| z,
    )
}

impl PicardProblem {
    pub fn new(
        rho0: RealField,
        u0: RealField,
        b0: RealField,
        params: PhysParams,
        times: Vec<f64>,
    ) -> Result<Self> {
        params.validate()?;
        let grid = *rho0.grid();
        grid.check_same(u0.grid())?;
        grid.check_same(b0.grid())?;
        if rho0.components() != 1 || u0.components() != grid.dim() || b0.components() != grid.dim()
        {
            return Err(Error::ShapeMismatch(
                "rho0 must be scalar, u0 and B0 vectors".into(),
            ));
        }
        let floor = params.density_limit();
        if !(rho0.min() > floor) {
            return Err(Error::DensityFloor {
                min: rho0.min(),
                floor,
            });
        }
        if times.len() < 3 {
            return Err(Error::InsufficientSnapshots {
                needed: 3,
                have: times.len(),
            });
        }
        let (u_free, b_free) = free_solutions(&u0, &b0, &params, &times)?;
        let inv_rho0 = rho0.map(|r| 1.0 / r);
        let mean_inv_rho0 = inv_rho0.mean(0);
        Ok(Self {
            params,
            rho0,
            u0,
            b0,
            times,
            u_free,
            b_free,
            inv_rho0,
            mean_inv_rho0,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.rho0.grid()
    }

    /// Explicit momentum and induction forcing at each time level.
    fn forcing(
        &self,
        v: &[RealField],
        b: &[RealField],
    ) -> Result<(Vec<SpectralField>, Vec<SpectralField>)> {
        let p = &self.params;
        let maps = lagrangian_flow(&self.times, v)?;
        let dv = time_derivative(&self.times, v)?;
        let db = time_derivative(&self.times, b)?;
        let coef = self.inv_rho0.map(|r| r - 1.0 / p.rho_bar);
        let mut fu = Vec::with_capacity(v.len());
        let mut fb = Vec::with_capacity(v.len());
        for n in 0..v.len() {
            let src = source_terms(&v[n], &b[n], &dv[n], &db[n], &self.rho0, &maps[n], p)?;
            let mut stress = &src.i2 + &src.i3;
            stress -= &src.i4;
            stress += &src.i5;
            stress -= &src.i6;
            let mut mom = matrix_divergence(&stress)?.pointwise_mul(&self.inv_rho0)?;
            let lame_free = lame_apply(&forward(&self.u_free[n]), p).to_real();
            mom += &lame_free.pointwise_mul(&coef)?;
            fu.push(forward(&mom).dealiased());

            let mut ind = matrix_divergence(&(&(&src.i8 + &src.i9) + &src.i10))?;
            ind += &src.i7;
            ind += &src.i11;
            fb.push(forward(&ind).dealiased());
        }
        Ok((fu, fb))
    }

    /// `(ρ₀⁻¹ − m)·Lamé(û)`, dealiased.
    fn variable_remainder(&self, u_hat: &SpectralField) -> Result<SpectralField> {
        let lame = lame_apply(u_hat, &self.params).to_real();
        let coef = self.inv_rho0.map(|r| r - self.mean_inv_rho0);
        Ok(forward(&lame.pointwise_mul(&coef)?).dealiased())
    }

    /// One application of `Φ`: returns `(u_L + û, B_L + B̂)` on the time grid.
    pub fn phi(
        &self,
        v: &[RealField],
        b: &[RealField],
    ) -> Result<(Vec<RealField>, Vec<RealField>)> {
        let n = self.times.len();
        if v.len() != n || b.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "iterates need {n} time levels"
            )));
        }
        let p = &self.params;
        let m = self.mean_inv_rho0;
        let lame = Propagator::Lame {
            mu: p.mu * m,
            lambda: p.lambda * m,
        };
        let heat = Propagator::Heat { nu: p.nu };
        let (fu, fb) = self.forcing(v, b)?;
        let grid = *self.grid();
        let dim = grid.dim();
        let mut u_hat = SpectralField::zeros(grid, dim);
        let mut b_hat = SpectralField::zeros(grid, dim);
        let mut u_out = vec![self.u_free[0].clone()];
        let mut b_out = vec![self.b_free[0].clone()];
        for k in 0..n - 1 {
            let h = self.times[k + 1] - self.times[k];
            let mut n0 = self.variable_remainder(&u_hat)?;
            n0.axpy(1.0, &fu[k]);
            let mut a = apply_symbol(&u_hat, lame, h, f64::exp);
            a.axpy(h, &apply_symbol(&n0, lame, h, phi1));
            let a = a.dealiased();
            let mut n1 = self.variable_remainder(&a)?;
            n1.axpy(1.0, &fu[k + 1]);
            let mut next = a;
            next.axpy(h, &apply_symbol(&(&n1 - &n0), lame, h, phi2));
            u_hat = next.dealiased();

            let mut bn = apply_symbol(&b_hat, heat, h, f64::exp);
            bn.axpy(h, &apply_symbol(&fb[k], heat, h, phi1));
            bn.axpy(h, &apply_symbol(&(&fb[k + 1] - &fb[k]), heat, h, phi2));
            b_hat = bn.dealiased();

            let u = &self.u_free[k + 1] + &u_hat.to_real();
            let bb = &self.b_free[k + 1] + &b_hat.to_real();
            if !(u.is_finite() && bb.is_finite()) {
                return Err(Error::NonFinite("Picard iterate"));
            }
            u_out.push(u);
            b_out.push(bb);
        }
        Ok((u_out, b_out))
    }
}

/// `Φ(v, b)` for the given data on the configuration's time grid.
pub fn phi_map(
    v: &[RealField],
    b: &[RealField],
    rho0: &RealField,
    u0: &RealField,
    b0: &RealField,
    params: &PhysParams,
    cfg: &PicardConfig,
) -> Result<(Vec<RealField>, Vec<RealField>)> {
    cfg.validate(rho0.grid().dim())?;
    let problem = PicardProblem::new(
        rho0.clone(),
        u0.clone(),
        b0.clone(),
        *params,
        cfg.time_grid(),
    )?;
    problem.phi(v, b)
}

/// Besov block norms `‖Δ_j f‖_{L^p}` of each time level.
fn path_blocks(fam: &DyadicFamily, path: &[RealField], p: f64) -> Result<Vec<Vec<f64>>> {
    path.iter().map(|f| fam.block_norms(f, p)).collect()
}

fn laplacian_path(path: &[RealField]) -> Result<Vec<RealField>> {
    path.iter()
        .map(|f| Ok(differentiate(&forward(f), Derivative::Laplacian)?.to_real()))
        .collect()
}

/// `‖w‖_{E_p(T)} = ‖w‖_{L̃^∞_T(Ḃ^s)} + ‖∂ₜw‖_{L̃¹_T(Ḃ^s)} + ‖Δw‖_{L̃¹_T(Ḃ^s)}`
/// with `s = N/p − 1` and Besov summation index 1.
pub fn ep_norm(fam: &DyadicFamily, times: &[f64], path: &[RealField], p: f64) -> Result<f64> {
    let s = fam.grid().dim() as f64 / p - 1.0;
    let dt = time_derivative(times, path)?;
    let lap = laplacian_path(path)?;
    Ok(
        chemin_lerner_from_blocks(fam, times, &path_blocks(fam, path, p)?, s, f64::INFINITY)
            + chemin_lerner_from_blocks(fam, times, &path_blocks(fam, &dt, p)?, s, 1.0)
            + chemin_lerner_from_blocks(fam, times, &path_blocks(fam, &lap, p)?, s, 1.0),
    )
}

/// `∫₀ᵀ ‖∇v‖_{Ḃ^{N/p}_{p,1}} dt`.
pub fn gradient_integral(
    fam: &DyadicFamily,
    times: &[f64],
    v: &[RealField],
    p: f64,
) -> Result<f64> {
    let spec = BesovSpec::new(fam.grid().dim() as f64 / p, p, 1.0)?;
    let values = v
        .iter()
        .map(|f| besov_norm(fam, &gradient(f)?, &spec))
        .collect::<Result<Vec<f64>>>()?;
    Ok(time_lebesgue(times, &values, 1.0))
}

/// The hypotheses of the self-map step, evaluated with the configured
/// constants. Reported, never enforced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeBoundConditions {
    /// `‖a₀‖_{Ḃ^{N/p}_{p,1}}` with `a₀ = ρ₀/ρ̄ − 1`
    pub a0_norm: f64,
    pub m: i32,
    /// `C_{ρ₀,m}`
    pub c_rho_m: f64,
    /// `C_{ρ₀,m}T ≤ log 2`
    pub c_rho_m_t_ok: bool,
    /// `T ≤ R²`
    pub t_le_r2: bool,
    /// `‖a₀‖‖u_L‖_{L̃¹(Ḃ^{N/p})}`
    pub a0_free_u: f64,
    pub a0_free_u_ok: bool,
    /// `‖∂ₜu_L‖_{L̃¹(Ḃ^{N/p−1})} + ‖u_L‖_{L̃¹(Ḃ^{N/p+1})} + ‖u_L‖_{L̃²(Ḃ^{N/p})}`
    pub free_u: f64,
    pub free_u_ok: bool,
    /// Same combination for `B_L`.
    pub free_b: f64,
    pub free_b_ok: bool,
    /// `(1+‖a₀‖)²R`
    pub eta_lhs: f64,
    /// `(1+‖a₀‖)²R ≤ η < 1/(20C)`
    pub eta_ok: bool,
    pub all_ok: bool,
}

fn free_combination(
    fam: &DyadicFamily,
    times: &[f64],
    path: &[RealField],
    p: f64,
) -> Result<(f64, f64)> {
    let np = fam.grid().dim() as f64 / p;
    let blocks = path_blocks(fam, path, p)?;
    let dt_blocks = path_blocks(fam, &time_derivative(times, path)?, p)?;
    let l1_np = chemin_lerner_from_blocks(fam, times, &blocks, np, 1.0);
    let sum = chemin_lerner_from_blocks(fam, times, &dt_blocks, np - 1.0, 1.0)
        + chemin_lerner_from_blocks(fam, times, &blocks, np + 1.0, 1.0)
        + chemin_lerner_from_blocks(fam, times, &blocks, np, 2.0);
    Ok((l1_np, sum))
}

pub fn time_bound_conditions(
    problem: &PicardProblem,
    fam: &DyadicFamily,
    cfg: &PicardConfig,
) -> Result<TimeBoundConditions> {
    let p = cfg.p;
    let np = fam.grid().dim() as f64 / p;
    let a0 = problem.rho0.map(|r| r / problem.params.rho_bar - 1.0);
    let a0_norm = besov_norm(fam, &a0, &BesovSpec::new(np, p, 1.0)?)?;
    let m = cfg.m.unwrap_or(fam.j_max());
    let t = cfg.horizon;
    let r = cfg.radius;
    let c_rho = c_rho_m(cfg.c_const, t, m, a0_norm);
    let (ul_l1, free_u) = free_combination(fam, &problem.times, &problem.u_free, p)?;
    let (_, free_b) = free_combination(fam, &problem.times, &problem.b_free, p)?;
    let a0_free_u = a0_norm * ul_l1;
    let eta_lhs = (1.0 + a0_norm).powi(2) * r;
    let c_rho_m_t_ok = c_rho * t <= std::f64::consts::LN_2;
    let t_le_r2 = t <= r * r;
    let a0_free_u_ok = a0_free_u <= r * r;
    let free_u_ok = free_u <= r;
    let free_b_ok = free_b <= r;
    let eta_ok = eta_lhs <= cfg.eta && cfg.eta < 1.0 / (20.0 * cfg.c_const);
    Ok(TimeBoundConditions {
        a0_norm,
        m,
        c_rho_m: c_rho,
        c_rho_m_t_ok,
        t_le_r2,
        a0_free_u,
        a0_free_u_ok,
        free_u,
        free_u_ok,
        free_b,
        free_b_ok,
        eta_lhs,
        eta_ok,
        all_ok: c_rho_m_t_ok && t_le_r2 && a0_free_u_ok && free_u_ok && free_b_ok && eta_ok,
    })
}

/// Norms of one iterate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateNorms {
    /// `‖v‖_{E_p}`
    pub u_norm: f64,
    /// `‖b‖_{E_p}`
    pub b_norm: f64,
    /// `‖v − u_L‖_{E_p} + ‖b − B_L‖_{E_p}`
    pub ball_distance: f64,
    pub in_ball: bool,
    /// `∫₀ᵀ ‖∇v‖_{Ḃ^{N/p}_{p,1}}`
    pub gradient_integral: f64,
    pub small_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    pub iterations: usize,
    pub converged: bool,
    /// Norms of iterates `0..=iterations`.
    pub norms: Vec<IterateNorms>,
    /// `δⁿ = ‖vⁿ − vⁿ⁻¹‖_{E_p} + ‖bⁿ − bⁿ⁻¹‖_{E_p}` for `n = 1..=iterations`.
    pub differences: Vec<f64>,
    /// `δⁿ⁺¹/δⁿ` for `n = 1..iterations`; `ratios[0]` is `ratio_1`.
    pub ratios: Vec<f64>,
    pub conditions: TimeBoundConditions,
    pub existence_time: f64,
    pub all_in_ball: bool,
    pub all_small: bool,
}

/// Converged iterate in Lagrangian coordinates.
#[derive(Debug, Clone)]
pub struct LagrangianSolution {
    pub times: Vec<f64>,
    pub u: Vec<RealField>,
    pub b: Vec<RealField>,
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub report: PicardReport,
    pub solution: LagrangianSolution,
}

fn difference_norm(
    fam: &DyadicFamily,
    times: &[f64],
    a: &[RealField],
    b: &[RealField],
    p: f64,
) -> Result<f64> {
    let diff: Vec<RealField> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    ep_norm(fam, times, &diff, p)
}

/// `E_p` norms, ball distance and smallness integral of an iterate.
pub fn iterate_norms(
    problem: &PicardProblem,
    fam: &DyadicFamily,
    cfg: &PicardConfig,
    v: &[RealField],
    b: &[RealField],
) -> Result<IterateNorms> {
    let (times, p) = (&problem.times, cfg.p);
    let u_norm = ep_norm(fam, times, v, p)?;
    let b_norm = ep_norm(fam, times, b, p)?;
    let ball_distance = difference_norm(fam, times, v, &problem.u_free, p)?
        + difference_norm(fam, times, b, &problem.b_free, p)?;
    let gradient_integral = gradient_integral(fam, times, v, p)?;
    Ok(IterateNorms {
        u_norm,
        b_norm,
        ball_distance,
        in_ball: ball_distance <= cfg.radius,
        gradient_integral,
        small_ok: gradient_integral <= cfg.small_c,
    })
}

/// Conditions and norms of the starting iterate `(u_L, B_L)`, available
/// without applying `Φ` (which may fold for large data).
pub fn preflight(
    rho0: &RealField,
    u0: &RealField,
    b0: &RealField,
    params: &PhysParams,
    cfg: &PicardConfig,
) -> Result<(TimeBoundConditions, IterateNorms)> {
    let grid = *rho0.grid();
    cfg.validate(grid.dim())?;
    let problem = PicardProblem::new(
        rho0.clone(),
        u0.clone(),
        b0.clone(),
        *params,
        cfg.time_grid(),
    )?;
    let fam = DyadicFamily::new(grid)?;
    let conditions = time_bound_conditions(&problem, &fam, cfg)?;
    let norms = iterate_norms(&problem, &fam, cfg, &problem.u_free, &problem.b_free)?;
    Ok((conditions, norms))
}

/// Runs `(v⁰, b⁰) = (u_L, B_L)`, `(vⁿ⁺¹, bⁿ⁺¹) = Φ(vⁿ, bⁿ)` until
/// `δⁿ ≤ tol·(‖vⁿ‖ + ‖bⁿ‖)` or the iteration cap. Fails with
/// `NonConvergence` once three consecutive ratios exceed 1.
pub fn picard_run(
    rho0: &RealField,
    u0: &RealField,
    b0: &RealField,
    params: &PhysParams,
    cfg: &PicardConfig,
) -> Result<PicardOutcome> {
    let grid = *rho0.grid();
    cfg.validate(grid.dim())?;
    let problem = PicardProblem::new(
        rho0.clone(),
        u0.clone(),
        b0.clone(),
        *params,
        cfg.time_grid(),
    )?;
    let fam = DyadicFamily::new(grid)?;
    let times = problem.times.clone();
    let p = cfg.p;
    let conditions = time_bound_conditions(&problem, &fam, cfg)?;

    let norms_of = |v: &[RealField], b: &[RealField]| iterate_norms(&problem, &fam, cfg, v, b);

    let mut v = problem.u_free.clone();
    let mut b = problem.b_free.clone();
    let mut norms = vec![norms_of(&v, &b)?];
    let mut differences = Vec::new();
    let mut ratios = Vec::new();
    let mut converged = false;
    let mut streak = 0;
    for _ in 0..cfg.max_iterations {
        let (v_next, b_next) = problem.phi(&v, &b)?;
        let delta = difference_norm(&fam, &times, &v_next, &v, p)?
            + difference_norm(&fam, &times, &b_next, &b, p)?;
        let current = norms_of(&v_next, &b_next)?;
        if let Some(&prev) = differences.last() {
            let ratio = if prev > 0.0 { delta / prev } else { 0.0 };
            ratios.push(ratio);
            streak = if ratio > 1.0 { streak + 1 } else { 0 };
        }
        let scale = current.u_norm + current.b_norm;
        differences.push(delta);
        norms.push(current);
        v = v_next;
        b = b_next;
        if streak >= 3 {
            return Err(Error::NonConvergence { streak });
        }
        if delta <= cfg.tolerance * scale {
            converged = true;
            break;
        }
    }
    let report = PicardReport {
        iterations: differences.len(),
        converged,
        all_in_ball: norms.iter().all(|n| n.in_ball),
        all_small: norms.iter().all(|n| n.small_ok),
        existence_time: existence_time(conditions.a0_norm, cfg.c_bar),
        norms,
        differences,
        ratios,
        conditions,
    };
    Ok(PicardOutcome {
        report,
        solution: LagrangianSolution { times, u: v, b },
    })
}

impl LagrangianSolution {
    pub fn flow_maps(&self) -> Result<Vec<FlowMap>> {
        lagrangian_flow(&self.times, &self.u)
    }

    /// Eulerian state at time level `n`: `ρ̃ = ρ₀/J` and every field pushed
    /// forward through `X⁻¹`.
    pub fn eulerian_state(&self, rho0: &RealField, n: usize) -> Result<State> {
        if n >= self.times.len() {
            return Err(Error::OutOfRange {
                t: n as f64,
                start: 0.0,
                end: (self.times.len() - 1) as f64,
            });
        }
        let grid = *rho0.grid();
        let mut disp = RealField::zeros(grid, grid.dim());
        for i in 1..=n {
            let h = self.times[i] - self.times[i - 1];
            disp.axpy(0.5 * h, &self.u[i - 1]);
            disp.axpy(0.5 * h, &self.u[i]);
        }
        let fm = FlowMap::from_displacement(disp, self.times[n])?;
        let inv = inverse_displacement(&fm)?;
        let rho_lagr = rho0.pointwise_mul(&fm.jacobian.map(|j| 1.0 / j))?;
        State::new(
            self.times[n],
            push_forward_with(&rho_lagr, &inv)?,
            push_forward_with(&self.u[n], &inv)?,
            push_forward_with(&self.b[n], &inv)?,
        )
    }
}

/// Relative residuals of the Lagrangian system at the interior time levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointResiduals {
    /// `ρ₀∂ₜũ − div(adj(S(DũA) − P(ρ₀/J)Id + B̃B̃ᵀ − ½|B̃|²Id))`
    pub momentum: f64,
    /// `J∂ₜB̃ − ν div(adj Aᵀ(∇B̃)ᵀ) − div(adj B̃ũᵀ) + div(adj ũ)B̃`
    pub induction: f64,
    /// `‖div(adj B̃)‖ / ‖∇B̃‖`
    pub gauge: f64,
}

/// Checks that a Lagrangian path solves the full Lagrangian MHD system.
pub fn fixed_point_residuals(
    sol: &LagrangianSolution,
    rho0: &RealField,
    params: &PhysParams,
) -> Result<FixedPointResiduals> {
    let maps = sol.flow_maps()?;
    let du = time_derivative(&sol.times, &sol.u)?;
    let db = time_derivative(&sol.times, &sol.b)?;
    let dim = rho0.grid().dim();
    let (mut rm, mut sm, mut ri, mut si, mut rg, mut sg) = (0f64, 0f64, 0f64, 0f64, 0f64, 0f64);
    for n in 0..sol.times.len() {
        let fm = &maps[n];
        let (u, b) = (&sol.u[n], &sol.b[n]);
        let grad_b = gradient(b)?;
        if n > 0 && n + 1 < sol.times.len() {
            let rho_lagr = rho0.pointwise_mul(&fm.jacobian.map(|j| 1.0 / j))?;
            let pressure = rho_lagr.map(|r| params.pressure(r, 0));
            let b2 = b.magnitude().map(|m| 0.5 * m * m);
            let mut sigma = stress(&matmul(&gradient(u)?, &fm.inverse), params);
            sigma -= &scalar_identity(&pressure, dim);
            sigma += &outer(b, b);
            sigma -= &scalar_identity(&b2, dim);
            let lhs = du[n].pointwise_mul(rho0)?;
            let res = &lhs - &matrix_divergence(&matmul(&fm.adjugate, &sigma))?;
            rm = rm.max(l2_norm(&res));
            sm = sm.max(l2_norm(&lhs));

            let a_t = transpose(&fm.inverse);
            let diffusion =
                matmul(&fm.adjugate, &matmul(&a_t, &transpose(&grad_b))).scaled(params.nu);
            let mut flux = diffusion;
            flux += &matmul(&fm.adjugate, &outer(b, u));
            let adj_u = matvec(&fm.adjugate, u);
            let div_adj_u = differentiate(&forward(&adj_u), Derivative::Divergence)?.to_real();
            let lhs = db[n].pointwise_mul(&fm.jacobian)?;
            let mut res = &lhs - &matrix_divergence(&flux)?;
            res += &b.pointwise_mul(&div_adj_u)?;
            ri = ri.max(l2_norm(&res));
            si = si.max(l2_norm(&lhs));
        }
        let adj_b = matvec(&fm.adjugate, b);
        rg = rg.max(l2_norm(
            &differentiate(&forward(&adj_b), Derivative::Divergence)?.to_real(),
        ));
        sg = sg.max(l2_norm(&grad_b));
    }
    let ratio = |r: f64, s: f64| if s == 0.0 { r } else { r / s };
    Ok(FixedPointResiduals {
        momentum: ratio(rm, sm),
        induction: ratio(ri, si),
        gauge: ratio(rg, sg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn existence_time_formula() {
        assert_eq!(existence_time(0.0, 0.01), 0.01);
        assert_eq!(existence_time(1.0, 0.01), 0.01 / 16.0);
        assert_eq!(existence_time(3.0, 0.01), 0.01 / 256.0);
    }

    #[test]
    fn config_validation() {
        let cfg = PicardConfig::default();
        assert!(cfg.validate(3).is_ok());
        assert!(cfg.validate(2).is_err());
        assert!(PicardConfig { p: 2.0, ..cfg }.validate(2).is_ok());
        assert!(PicardConfig {
            radius: 0.0,
            p: 2.0,
            ..cfg
        }
        .validate(2)
        .is_err());
        assert_eq!(
            PicardConfig {
                horizon: 0.1,
                dt: 0.03,
                ..cfg
            }
            .time_grid()
            .len(),
            4
        );
    }

    #[test]
    fn time_derivative_is_exact_for_quadratics() {
        let g = Grid::standard(1, 8).unwrap();
        let times: Vec<f64> = (0..5).map(|i| 0.1 * i as f64).collect();
        let path: Vec<RealField> = times
            .iter()
            .map(|t| RealField::constant(g, &[t * t + 2.0 * t]))
            .collect();
        let d = time_derivative(&times, &path).unwrap();
        for (t, f) in times.iter().zip(&d) {
            assert!((f.data()[0] - (2.0 * t + 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn sources_at_identity_flow() {
        let g = Grid::standard(2, 16).unwrap();
        let p = PhysParams::default();
        let zero = RealField::zeros(g, 2);
        let b = RealField::from_fn(g, 2, |x, c| if c == 0 { x[1].sin() } else { 0.5 });
        let rho0 = RealField::constant(g, &[1.0]);
        let fm = FlowMap::identity(g, 0.0);
        let s = source_terms(&zero, &b, &zero, &zero, &rho0, &fm, &p).unwrap();
        for f in [&s.i1, &s.i2, &s.i3, &s.i7, &s.i8, &s.i9, &s.i10, &s.i11] {
            assert_eq!(f.max_abs(), 0.0);
        }
        let p_bar = p.pressure(1.0, 0);
        assert!((&s.i4 - &scalar_identity(&RealField::constant(g, &[p_bar]), 2)).max_abs() < 1e-15);
        assert!((&s.i5 - &outer(&b, &b)).max_abs() < 1e-15);
        let half_b2 = b.magnitude().map(|m| 0.5 * m * m);
        assert!((&s.i6 - &scalar_identity(&half_b2, 2)).max_abs() < 1e-15);
    }
}
