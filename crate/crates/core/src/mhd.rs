//! Eulerian isentropic compressible MHD on the torus:
//!
//! ```text
//! ρ_t + div(ρu) = 0
//! ρ(u_t + u·∇u) + ∇P(ρ) = B·∇B - ½∇|B|² + μΔu + (λ+μ)∇div u
//! B_t = -(div u)B - u·∇B + B·∇u + νΔB
//! ```
//!
//! with `P(ρ) = Aρ^γ`. Time stepping is a two-stage exponential integrator
//! whose linear part is the exact heat / Lamé semigroup.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{
    differentiate, forward, l2_norm, Derivative, Grid, RealField, SpectralField,
};

/// Fraction of the advective/acoustic/Alfvén crossing time allowed per step.
pub const DEFAULT_CFL_FACTOR: f64 = 0.4;

/// Physical coefficients and the pressure law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub mu: f64,
    pub lambda: f64,
    pub nu: f64,
    pub pressure_a: f64,
    pub pressure_gamma: f64,
    pub rho_bar: f64,
    pub c0_floor: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        Self {
            mu: 0.05,
            lambda: 0.05,
            nu: 0.05,
            pressure_a: 1.0,
            pressure_gamma: 1.4,
            rho_bar: 1.0,
            c0_floor: 0.5,
        }
    }
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mu,
            self.lambda,
            self.nu,
            self.pressure_a,
            self.pressure_gamma,
            self.rho_bar,
            self.c0_floor,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("parameters must be finite".into()));
        }
        let checks = [
            (self.mu > 0.0, "mu > 0"),
            (self.lambda + 2.0 * self.mu > 0.0, "lambda + 2 mu > 0"),
            (self.nu > 0.0, "nu > 0"),
            (self.pressure_a > 0.0, "pressure_a > 0"),
            (self.pressure_gamma >= 1.0, "pressure_gamma >= 1"),
            (self.rho_bar > 0.0, "rho_bar > 0"),
            (
                self.c0_floor > 0.0 && self.c0_floor < 1.0,
                "0 < c0_floor < 1",
            ),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::InvalidParams(format!("{what} violated: {self:?}")));
            }
        }
        Ok(())
    }

    /// `μ' = λ + μ`.
    pub fn mu_prime(&self) -> f64 {
        self.lambda + self.mu
    }

    /// Density below which a run is aborted.
    pub fn density_limit(&self) -> f64 {
        0.25 * self.c0_floor
    }

    /// `P^{(order)}(ρ)` for the γ-law.
    pub fn pressure(&self, rho: f64, order: u8) -> f64 {
        let (a, g) = (self.pressure_a, self.pressure_gamma);
        match order {
            0 => a * rho.powf(g),
            1 => a * g * rho.powf(g - 1.0),
            2 => a * g * (g - 1.0) * rho.powf(g - 2.0),
            k => {
                let mut coef = a;
                for i in 0..k {
                    coef *= g - i as f64;
                }
                coef * rho.powf(g - k as f64)
            }
        }
    }

    /// Pressure potential `Π` with `Π(ρ̄) = Π'(ρ̄) = 0` and `ρΠ'' = P'`.
    pub fn pressure_potential(&self, rho: f64) -> f64 {
        let (a, g, rb) = (self.pressure_a, self.pressure_gamma, self.rho_bar);
        if g == 1.0 {
            a * (rho * (rho / rb).ln() - rho + rb)
        } else {
            a * (rho.powf(g) - rb.powf(g) - g * rb.powf(g - 1.0) * (rho - rb)) / (g - 1.0)
        }
    }
}

/// `P^{(order)}` evaluated pointwise.
pub fn pressure_eval(rho: &RealField, params: &PhysParams, order: u8) -> Result<RealField> {
    if rho.components() != 1 {
        return Err(Error::ShapeMismatch("density must be scalar".into()));
    }
    if rho.data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "nonpositive density (min {})",
            rho.min()
        )));
    }
    Ok(rho.map(|r| params.pressure(r, order)))
}

/// `(P₊, P₋)`: the largest `|P^{(k)}|`, `k ∈ {0..=k_max}`, and the smallest
/// `|P'|` on `[c₀/4, 4/c₀]`, sampled at `10⁴` points.
pub fn range_bounds(params: &PhysParams, k_max: u8) -> (f64, f64) {
    let lo = params.c0_floor / 4.0;
    let hi = 4.0 / params.c0_floor;
    let samples = 10_000;
    let mut p_plus: f64 = 0.0;
    let mut p_minus = f64::INFINITY;
    for i in 0..samples {
        let r = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
        for k in 0..=k_max {
            p_plus = p_plus.max(params.pressure(r, k).abs());
        }
        p_minus = p_minus.min(params.pressure(r, 1).abs());
    }
    (p_plus, p_minus)
}

/// `(ρ, u, B)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub rho: RealField,
    pub u: RealField,
    pub b: RealField,
}

impl State {
    pub fn new(t: f64, rho: RealField, u: RealField, b: RealField) -> Result<Self> {
        let grid = *rho.grid();
        let dim = grid.dim();
        if rho.components() != 1 || u.components() != dim || b.components() != dim {
            return Err(Error::ShapeMismatch(format!(
                "state needs 1/{dim}/{dim} components, got {}/{}/{}",
                rho.components(),
                u.components(),
                b.components()
            )));
        }
        grid.check_same(u.grid())?;
        grid.check_same(b.grid())?;
        if !t.is_finite() {
            return Err(Error::NonFinite("state time"));
        }
        if !(rho.is_finite() && u.is_finite() && b.is_finite()) {
            return Err(Error::NonFinite("state fields"));
        }
        Ok(Self { t, rho, u, b })
    }

    /// `(ρ̄, 0, 0)`.
    pub fn equilibrium(grid: Grid, params: &PhysParams) -> Self {
        Self {
            t: 0.0,
            rho: RealField::constant(grid, &[params.rho_bar]),
            u: RealField::zeros(grid, grid.dim()),
            b: RealField::zeros(grid, grid.dim()),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    /// Projects every field onto the two-thirds ball.
    pub fn truncated(&self) -> State {
        let t = |f: &RealField| forward(f).dealiased().to_real();
        State {
            t: self.t,
            rho: t(&self.rho),
            u: t(&self.u),
            b: t(&self.b),
        }
    }

    /// `∫ρu dx`.
    pub fn momentum(&self) -> Vec<f64> {
        let grid = self.grid();
        let w = grid.volume() / grid.len() as f64;
        (0..grid.dim())
            .map(|c| {
                w * self
                    .u
                    .component(c)
                    .iter()
                    .zip(self.rho.data())
                    .map(|(u, r)| u * r)
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Snapshots of one run with strictly increasing times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<State>,
    pub params: PhysParams,
}

impl Trajectory {
    pub fn new(params: PhysParams) -> Self {
        Self {
            snapshots: Vec::new(),
            params,
        }
    }

    pub fn from_states(states: Vec<State>, params: PhysParams) -> Result<Self> {
        let mut tr = Self::new(params);
        for s in states {
            tr.push(s)?;
        }
        Ok(tr)
    }

    pub fn push(&mut self, s: State) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            last.grid().check_same(s.grid())?;
            if s.t <= last.t {
                return Err(Error::InvalidArgument(format!(
                    "snapshot time {} not after {}",
                    s.t, last.t
                )));
            }
        }
        self.snapshots.push(s);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.snapshots.first().map(|s| s.grid())
    }

    pub fn start(&self) -> f64 {
        self.snapshots.first().map_or(0.0, |s| s.t)
    }

    pub fn end(&self) -> f64 {
        self.snapshots.last().map_or(0.0, |s| s.t)
    }

    pub fn last(&self) -> Option<&State> {
        self.snapshots.last()
    }
}

/// Time derivatives of the three unknowns.
#[derive(Debug, Clone)]
pub struct Rhs {
    pub drho: RealField,
    pub du: RealField,
    pub db: RealField,
}

/// Spectral form of the state, truncated to the two-thirds ball.
struct SpectralState {
    rho: SpectralField,
    u: SpectralField,
    b: SpectralField,
}

impl SpectralState {
    fn from_state(s: &State) -> Self {
        Self {
            rho: forward(&s.rho).dealiased(),
            u: forward(&s.u).dealiased(),
            b: forward(&s.b).dealiased(),
        }
    }
}

/// Everything the right-hand side produces, in spectral form.
struct Evaluation {
    rho: RealField,
    /// `M = -∇P + B·∇B - ½∇|B|² + μΔu + (λ+μ)∇div u`, untruncated.
    force: SpectralField,
    /// `B·∇B`, truncated.
    tension: SpectralField,
    drho: SpectralField,
    du: SpectralField,
    db: SpectralField,
}

/// `out_i = Σ_j a_j grad[i*dim + j]`, pointwise.
pub(crate) fn dot_grad(a: &RealField, grad: &RealField) -> RealField {
    let grid = *a.grid();
    let dim = grid.dim();
    let comps = grad.components() / dim;
    let mut out = RealField::zeros(grid, comps);
    for i in 0..comps {
        let dst = out.component_mut(i);
        for j in 0..dim {
            for ((o, x), y) in dst
                .iter_mut()
                .zip(a.component(j))
                .zip(grad.component(i * dim + j))
            {
                *o += x * y;
            }
        }
    }
    out
}

fn check_density(rho: &RealField, params: &PhysParams) -> Result<()> {
    let min = rho.min();
    if !(min >= params.density_limit()) {
        return Err(Error::DensityFloor {
            min,
            floor: params.density_limit(),
        });
    }
    Ok(())
}

fn evaluate(st: &SpectralState, params: &PhysParams) -> Result<Evaluation> {
    let rho = st.rho.to_real();
    check_density(&rho, params)?;
    let u = st.u.to_real();
    let b = st.b.to_real();
    let grad_u = differentiate(&st.u, Derivative::Gradient)?.to_real();
    let grad_b = differentiate(&st.b, Derivative::Gradient)?.to_real();
    let div_u_s = differentiate(&st.u, Derivative::Divergence)?;
    let div_u = div_u_s.to_real();

    let advection = forward(&dot_grad(&u, &grad_u)).dealiased();
    let tension = forward(&dot_grad(&b, &grad_b)).dealiased();
    let b2 = forward(&b.magnitude().map(|m| 0.5 * m * m)).dealiased();
    let pressure = forward(&rho.map(|r| params.pressure(r, 0)));

    let mut force = tension.clone();
    force.axpy(-1.0, &differentiate(&pressure, Derivative::Gradient)?);
    force.axpy(-1.0, &differentiate(&b2, Derivative::Gradient)?);
    force.axpy(params.mu, &differentiate(&st.u, Derivative::Laplacian)?);
    force.axpy(
        params.mu_prime(),
        &differentiate(&div_u_s, Derivative::Gradient)?,
    );

    let accel = force.to_real().pointwise_mul(&rho.map(|r| 1.0 / r))?;
    let mut du = forward(&accel).dealiased();
    du.axpy(-1.0, &advection);

    let flux = forward(&u.pointwise_mul(&rho)?).dealiased();
    let drho = differentiate(&flux, Derivative::Divergence)?.scaled(-1.0);

    let mut induction = dot_grad(&b, &grad_u);
    induction.axpy(-1.0, &dot_grad(&u, &grad_b));
    induction.axpy(-1.0, &b.pointwise_mul(&div_u)?);
    let mut db = forward(&induction).dealiased();
    db.axpy(params.nu, &differentiate(&st.b, Derivative::Laplacian)?);

    Ok(Evaluation {
        rho,
        force,
        tension,
        drho,
        du,
        db,
    })
}

/// Non-conservative time derivatives `(ρ_t, u_t, B_t)`; all quadratic
/// products are two-thirds dealiased.
pub fn mhd_rhs(s: &State, params: &PhysParams) -> Result<Rhs> {
    params.validate()?;
    check_density(&s.rho, params)?;
    let ev = evaluate(&SpectralState::from_state(s), params)?;
    Ok(Rhs {
        drho: ev.drho.to_real(),
        du: ev.du.to_real(),
        db: ev.db.to_real(),
    })
}

/// Linear semigroups with exact Fourier symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Propagator {
    /// `∂_t f = νΔf`
    Heat { nu: f64 },
    /// `∂_t v = μΔv + (λ+μ)∇div v`
    Lame { mu: f64, lambda: f64 },
}

/// Applies `g(h·symbol)` mode by mode; for Lamé the longitudinal part
/// (parallel to `k`) gets `g(-(λ+2μ)|k|²h)` and the transverse part `g(-μ|k|²h)`.
pub(crate) fn apply_symbol(
    f: &SpectralField,
    which: Propagator,
    h: f64,
    g: impl Fn(f64) -> f64,
) -> SpectralField {
    let grid = *f.grid();
    let modes = grid.modes();
    let mut out = f.clone();
    match which {
        Propagator::Heat { nu } => {
            let factors: Vec<f64> = modes.k2.iter().map(|k2| g(-nu * k2 * h)).collect();
            out = out.apply_multiplier(|idx| factors[idx]);
        }
        Propagator::Lame { mu, lambda } => {
            let dim = grid.dim();
            let g0 = g(0.0);
            for idx in 0..grid.len() {
                let k2 = modes.k2[idx];
                let k = modes.wavevector[idx];
                let mut v = [Complex64::new(0.0, 0.0); 3];
                for (c, vc) in v.iter_mut().enumerate().take(dim) {
                    *vc = f.component(c)[idx];
                }
                if k2 == 0.0 {
                    for (c, vc) in v.iter().enumerate().take(dim) {
                        out.component_mut(c)[idx] = vc * g0;
                    }
                    continue;
                }
                let gl = g(-(lambda + 2.0 * mu) * k2 * h);
                let gt = g(-mu * k2 * h);
                let kv: Complex64 = (0..dim).map(|a| v[a] * k[a]).sum::<Complex64>() / k2;
                for c in 0..dim {
                    let par = kv * k[c];
                    out.component_mut(c)[idx] = par * gl + (v[c] - par) * gt;
                }
            }
        }
    }
    out
}

/// `e^{dt·L} f` for the heat or Lamé operator.
pub fn propagate(f: &SpectralField, dt: f64, which: Propagator) -> Result<SpectralField> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "propagation time must be >= 0, got {dt}"
        )));
    }
    if let Propagator::Lame { .. } = which {
        if f.components() != f.grid().dim() {
            return Err(Error::ShapeMismatch(format!(
                "Lamé propagator needs {} components, got {}",
                f.grid().dim(),
                f.components()
            )));
        }
    }
    Ok(apply_symbol(f, which, dt, f64::exp))
}

/// `φ₁(z) = (e^z - 1)/z`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + 0.5 * z
    } else {
        z.exp_m1() / z
    }
}

/// `φ₂(z) = (e^z - 1 - z)/z²`.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 0.1 {
        let mut term = 0.5;
        let mut sum = 0.5;
        for n in 3..12 {
            term *= z / n as f64;
            sum += term;
        }
        sum
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// Exact solution of `∂_t v - L v = f` at time `t` for time-independent `f`:
/// `e^{tL} v₀ + t φ₁(tL) f`.
pub fn forced_solution(
    v0: &SpectralField,
    f: &SpectralField,
    t: f64,
    which: Propagator,
) -> Result<SpectralField> {
    v0.grid().check_same(f.grid())?;
    if v0.components() != f.components() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} components",
            v0.components(),
            f.components()
        )));
    }
    let mut out = propagate(v0, t, which)?;
    out.axpy(t, &apply_symbol(f, which, t, phi1));
    Ok(out)
}

/// Pointwise `max(|u| + √P'(ρ) + |B|/√ρ)`.
pub fn max_signal_speed(s: &State, params: &PhysParams) -> f64 {
    let um = s.u.magnitude();
    let bm = s.b.magnitude();
    let mut best: f64 = 0.0;
    for ((u, b), r) in um.data().iter().zip(bm.data()).zip(s.rho.data()) {
        let c = params.pressure(r.max(0.0), 1).max(0.0).sqrt();
        best = best.max(u + c + b / r.sqrt());
    }
    best
}

/// Largest step the CFL rule allows for a state.
pub fn cfl_limit(s: &State, params: &PhysParams, cfl_factor: f64) -> f64 {
    let speed = max_signal_speed(s, params);
    if speed > 0.0 {
        cfl_factor * s.grid().spacing() / speed
    } else {
        f64::INFINITY
    }
}

/// Two-stage exponential time differencing (Cox–Matthews ETD2RK).
///
/// Linear parts: `(μΔ + (λ+μ)∇div)/ρ̄` on `u` and `νΔ` on `B`; everything
/// else, including the `(1/ρ - 1/ρ̄)` share of the viscous term, is the
/// nonlinearity. The density has no linear part, so its update reduces to Heun's
/// method.
#[derive(Debug, Clone, Copy)]
pub struct Stepper {
    pub params: PhysParams,
    pub cfl_factor: f64,
}

impl Stepper {
    pub fn new(params: PhysParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            cfl_factor: DEFAULT_CFL_FACTOR,
        })
    }

    pub fn with_cfl_factor(mut self, cfl_factor: f64) -> Self {
        self.cfl_factor = cfl_factor;
        self
    }

    fn lame(&self) -> Propagator {
        let p = &self.params;
        Propagator::Lame {
            mu: p.mu / p.rho_bar,
            lambda: p.lambda / p.rho_bar,
        }
    }

    fn heat(&self) -> Propagator {
        Propagator::Heat { nu: self.params.nu }
    }

    /// Nonlinear remainders `(N_ρ, N_u, N_B)`.
    fn nonlinear(
        &self,
        st: &SpectralState,
    ) -> Result<(SpectralField, SpectralField, SpectralField)> {
        let ev = evaluate(st, &self.params)?;
        let h = 1.0;
        let lin_u = apply_symbol(&st.u, self.lame(), h, |z| z);
        let lin_b = apply_symbol(&st.b, self.heat(), h, |z| z);
        Ok((ev.drho, &ev.du - &lin_u, &ev.db - &lin_b))
    }

    pub fn step(&self, s: &State, dt: f64) -> Result<State> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {dt}"
            )));
        }
        check_density(&s.rho, &self.params)?;
        let limit = cfl_limit(s, &self.params, self.cfl_factor);
        if dt > limit {
            return Err(Error::CflViolation { dt, limit });
        }
        let st = SpectralState::from_state(s);
        let (nr0, nu0, nb0) = self.nonlinear(&st)?;
        let (lame, heat) = (self.lame(), self.heat());

        let mut a_rho = st.rho.clone();
        a_rho.axpy(dt, &nr0);
        let mut a_u = apply_symbol(&st.u, lame, dt, f64::exp);
        a_u.axpy(dt, &apply_symbol(&nu0, lame, dt, phi1));
        let mut a_b = apply_symbol(&st.b, heat, dt, f64::exp);
        a_b.axpy(dt, &apply_symbol(&nb0, heat, dt, phi1));
        let stage = SpectralState {
            rho: a_rho.dealiased(),
            u: a_u.dealiased(),
            b: a_b.dealiased(),
        };

        let (nr1, nu1, nb1) = self.nonlinear(&stage)?;
        let mut rho = stage.rho;
        rho.axpy(0.5 * dt, &(&nr1 - &nr0));
        let mut u = stage.u;
        u.axpy(dt, &apply_symbol(&(&nu1 - &nu0), lame, dt, phi2));
        let mut b = stage.b;
        b.axpy(dt, &apply_symbol(&(&nb1 - &nb0), heat, dt, phi2));

        let next = State {
            t: s.t + dt,
            rho: rho.dealiased().to_real(),
            u: u.dealiased().to_real(),
            b: b.dealiased().to_real(),
        };
        if !(next.rho.is_finite() && next.u.is_finite() && next.b.is_finite()) {
            return Err(Error::NonFinite("stepped state"));
        }
        check_density(&next.rho, &self.params)?;
        Ok(next)
    }

    /// Takes `steps` steps of size `dt`, storing the initial state and every
    /// `save_every`-th state after it.
    pub fn run(
        &self,
        initial: &State,
        dt: f64,
        steps: usize,
        save_every: usize,
    ) -> Result<Trajectory> {
        let save_every = save_every.max(1);
        let mut traj = Trajectory::new(self.params);
        let mut s = initial.clone();
        traj.push(s.clone())?;
        for n in 1..=steps {
            s = self.step(&s, dt)?;
            // keep times on the exact lattice t0 + n dt
            s.t = initial.t + n as f64 * dt;
            if n % save_every == 0 || n == steps {
                traj.push(s.clone())?;
            }
        }
        Ok(traj)
    }
}

/// One step with the default CFL factor.
pub fn step_etdrk2(s: &State, dt: f64, params: &PhysParams) -> Result<State> {
    Stepper::new(*params)?.step(s, dt)
}

/// Effective viscous flux, vorticity tensor and the source of the flux
/// equation.
#[derive(Debug, Clone)]
pub struct FluxFields {
    /// `F = (λ+2μ) div u - P(ρ) + P(ρ̄)`
    pub flux: RealField,
    /// `ω^{j,k} = ∂_k u^j - ∂_j u^k` at component `j*dim + k`.
    pub omega: RealField,
    /// `g^j = ρu̇^j + ∂_j(½|B|²) - div(B^j B)`
    pub g: RealField,
}

struct FluxSpectral {
    flux: SpectralField,
    omega: SpectralField,
    g: SpectralField,
    rho_udot: SpectralField,
    tension: SpectralField,
}

fn flux_spectral(s: &State, params: &PhysParams) -> Result<FluxSpectral> {
    params.validate()?;
    check_density(&s.rho, params)?;
    let st = SpectralState::from_state(s);
    let ev = evaluate(&st, params)?;
    let grid = *s.grid();
    let dim = grid.dim();

    // ρu̇ with u̇ = u_t + u·∇u substituted from the momentum equation
    let udot = ev.force.to_real().pointwise_mul(&ev.rho.map(|r| 1.0 / r))?;
    let rho_udot = forward(&udot.pointwise_mul(&ev.rho)?);

    let b = st.b.to_real();
    let b2 = forward(&b.magnitude().map(|m| 0.5 * m * m)).dealiased();
    let mut outer = RealField::zeros(grid, dim * dim);
    for j in 0..dim {
        for i in 0..dim {
            let prod: Vec<f64> = b
                .component(j)
                .iter()
                .zip(b.component(i))
                .map(|(x, y)| x * y)
                .collect();
            outer.component_mut(j * dim + i).copy_from_slice(&prod);
        }
    }
    let outer = forward(&outer).dealiased();
    let mut g = rho_udot.clone();
    g.axpy(1.0, &differentiate(&b2, Derivative::Gradient)?);
    for j in 0..dim {
        let mut div_row = SpectralField::zeros(grid, 1);
        for i in 0..dim {
            div_row.axpy(
                1.0,
                &differentiate(&outer.extract(j * dim + i), Derivative::Partial(i))?,
            );
        }
        let gj = g.component_mut(j);
        for (x, y) in gj.iter_mut().zip(div_row.component(0)) {
            *x -= y;
        }
    }

    let div_u = differentiate(&st.u, Derivative::Divergence)?;
    let mut flux = div_u.scaled(params.lambda + 2.0 * params.mu);
    let pressure = ev
        .rho
        .map(|r| params.pressure(r, 0) - params.pressure(params.rho_bar, 0));
    flux.axpy(-1.0, &forward(&pressure));

    let grad_u = differentiate(&st.u, Derivative::Gradient)?;
    let mut omega = SpectralField::zeros(grid, dim * dim);
    for j in 0..dim {
        for k in 0..dim {
            let a = grad_u.component(j * dim + k);
            let b = grad_u.component(k * dim + j);
            let dst = omega.component_mut(j * dim + k);
            for ((o, x), y) in dst.iter_mut().zip(a).zip(b) {
                *o = x - y;
            }
        }
    }
    Ok(FluxSpectral {
        flux,
        omega,
        g,
        rho_udot,
        tension: ev.tension,
    })
}

/// Effective viscous flux `F`, vorticity `ω` and `g`.
pub fn flux_and_vorticity(s: &State, params: &PhysParams) -> Result<FluxFields> {
    let fs = flux_spectral(s, params)?;
    Ok(FluxFields {
        flux: fs.flux.to_real(),
        omega: fs.omega.to_real(),
        g: fs.g.to_real(),
    })
}

/// Relative residuals of the two elliptic identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticResiduals {
    /// `‖ΔF - div g‖₂ / ‖div g‖₂`
    pub r_flux: f64,
    /// Same for `μΔω^{j,k} = ∂_k(ρu̇^j) - ∂_j(ρu̇^k) - ∂_k(B·∇B^j) + ∂_j(B·∇B^k)`,
    /// numerators and denominators summed over `j < k`.
    pub r_omega: f64,
}

fn spectral_l2(f: &SpectralField) -> f64 {
    l2_norm(&f.to_real())
}

/// Checks `ΔF = div g` and the vorticity equation with `u̇` taken from the PDE.
pub fn elliptic_residuals(s: &State, params: &PhysParams) -> Result<EllipticResiduals> {
    let fs = flux_spectral(s, params)?;
    let grid = *s.grid();
    let dim = grid.dim();
    let lap_f = differentiate(&fs.flux, Derivative::Laplacian)?;
    let div_g = differentiate(&fs.g, Derivative::Divergence)?;
    let flux_gap = spectral_l2(&(&lap_f - &div_g));
    let r_flux = if flux_gap == 0.0 {
        0.0
    } else {
        flux_gap / spectral_l2(&div_g).max(f64::MIN_POSITIVE)
    };

    let lap_omega = differentiate(&fs.omega, Derivative::Laplacian)?.scaled(params.mu);
    let d_m = differentiate(&fs.rho_udot, Derivative::Gradient)?;
    let d_t = differentiate(&fs.tension, Derivative::Gradient)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..dim {
        for k in (j + 1)..dim {
            let mut rhs = d_m.extract(j * dim + k);
            rhs.axpy(-1.0, &d_m.extract(k * dim + j));
            rhs.axpy(-1.0, &d_t.extract(j * dim + k));
            rhs.axpy(1.0, &d_t.extract(k * dim + j));
            let lhs = lap_omega.extract(j * dim + k);
            num += spectral_l2(&(&lhs - &rhs));
            den += spectral_l2(&rhs);
        }
    }
    let r_omega = if num == 0.0 {
        0.0
    } else {
        num / den.max(f64::MIN_POSITIVE)
    };
    Ok(EllipticResiduals { r_flux, r_omega })
}

/// `ḟ = f_t + u·∇f` with a two-thirds dealiased product.
pub fn material_derivative(f: &RealField, f_t: &RealField, u: &RealField) -> Result<RealField> {
    let grid = *f.grid();
    grid.check_same(f_t.grid())?;
    grid.check_same(u.grid())?;
    if f_t.components() != f.components() || u.components() != grid.dim() {
        return Err(Error::ShapeMismatch(format!(
            "material derivative of {} components with f_t of {} and u of {}",
            f.components(),
            f_t.components(),
            u.components()
        )));
    }
    let us = forward(u).dealiased().to_real();
    let grad = differentiate(&forward(f).dealiased(), Derivative::Gradient)?.to_real();
    let adv = forward(&dot_grad(&us, &grad)).dealiased().to_real();
    Ok(f_t + &adv)
}

/// `‖div B‖₂`.
pub fn div_b_norm(s: &State) -> f64 {
    let div =
        differentiate(&forward(&s.b), Derivative::Divergence).expect("state has dim components");
    l2_norm(&div.to_real())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> PhysParams {
        PhysParams {
            mu: 0.1,
            lambda: 0.05,
            nu: 0.07,
            pressure_a: 1.0,
            pressure_gamma: 1.4,
            rho_bar: 1.0,
            c0_floor: 0.5,
        }
    }

    #[test]
    fn pressure_values() {
        let mut p = params();
        p.pressure_gamma = 1.0;
        let g = Grid::standard(2, 8).unwrap();
        let rho = RealField::constant(g, &[2.0]);
        assert_relative_eq!(pressure_eval(&rho, &p, 0).unwrap().data()[0], 2.0);
        assert_relative_eq!(pressure_eval(&rho, &p, 1).unwrap().data()[0], 1.0);
        let p = params();
        assert_relative_eq!(p.pressure(1.0, 1), 1.4);
        let (_, p_minus) = range_bounds(&p, 2);
        assert_relative_eq!(p_minus, 1.4 * 0.125f64.powf(0.4), max_relative = 1e-12);
        assert!(pressure_eval(&RealField::zeros(g, 1), &p, 0).is_err());
    }

    #[test]
    fn pressure_potential_properties() {
        for gamma in [1.0, 1.4, 2.0] {
            let p = PhysParams {
                pressure_gamma: gamma,
                ..params()
            };
            assert_eq!(p.pressure_potential(p.rho_bar), 0.0);
            let r = 1.3;
            let h = 1e-4;
            let second = (p.pressure_potential(r + h) - 2.0 * p.pressure_potential(r)
                + p.pressure_potential(r - h))
                / (h * h);
            assert_relative_eq!(r * second, p.pressure(r, 1), max_relative = 1e-6);
        }
    }

    #[test]
    fn params_validation() {
        assert!(params().validate().is_ok());
        assert!(PhysParams {
            mu: 0.0,
            ..params()
        }
        .validate()
        .is_err());
        assert!(PhysParams {
            lambda: -0.3,
            ..params()
        }
        .validate()
        .is_err());
        assert!(PhysParams {
            c0_floor: 1.0,
            ..params()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn equilibrium_rhs_vanishes() {
        let g = Grid::standard(3, 16).unwrap();
        let s = State::equilibrium(g, &params());
        let r = mhd_rhs(&s, &params()).unwrap();
        assert!(r.drho.max_abs() < 1e-14 && r.du.max_abs() < 1e-14 && r.db.max_abs() < 1e-14);
    }

    #[test]
    fn constant_density_transport() {
        let g = Grid::standard(2, 16).unwrap();
        let p = params();
        let u = RealField::from_fn(g, 2, |x, c| {
            if c == 0 {
                x[0].sin()
            } else {
                (2.0 * x[1]).cos()
            }
        });
        let s = State::new(
            0.0,
            RealField::constant(g, &[1.0]),
            u.clone(),
            RealField::zeros(g, 2),
        )
        .unwrap();
        let r = mhd_rhs(&s, &p).unwrap();
        let div = differentiate(&forward(&u), Derivative::Divergence)
            .unwrap()
            .to_real();
        assert!((&r.drho + &div).max_abs() < 1e-13);
    }

    #[test]
    fn force_free_field_decays_as_heat() {
        let g = Grid::standard(3, 16).unwrap();
        let p = params();
        let b = RealField::from_fn(g, 3, |x, c| match c {
            1 => x[0].sin(),
            2 => x[0].cos(),
            _ => 0.0,
        });
        let s = State::new(
            0.0,
            RealField::constant(g, &[1.0]),
            RealField::zeros(g, 3),
            b.clone(),
        )
        .unwrap();
        let r = mhd_rhs(&s, &p).unwrap();
        assert!((&r.db + &b.scaled(p.nu)).max_abs() < 1e-13);
        assert!(r.du.max_abs() < 1e-13);
    }

    #[test]
    fn propagator_eigenvalues() {
        let g = Grid::standard(2, 16).unwrap();
        let heat = forward(&RealField::from_fn(g, 1, |x, _| (2.0 * x[0]).cos()));
        let out = propagate(&heat, 0.25, Propagator::Heat { nu: 1.0 }).unwrap();
        assert_relative_eq!(
            out.coef(0, [2, 0, 0]).re,
            0.5 * (-1.0f64).exp(),
            max_relative = 1e-14
        );
        let (mu, lambda) = (0.3, 0.2);
        // transverse: u = (sin x2, 0), longitudinal: u = (sin x1, 0)
        let tr = forward(&RealField::from_fn(g, 2, |x, c| {
            if c == 0 {
                x[1].sin()
            } else {
                0.0
            }
        }));
        let lo = forward(&RealField::from_fn(g, 2, |x, c| {
            if c == 0 {
                x[0].sin()
            } else {
                0.0
            }
        }));
        let lame = Propagator::Lame { mu, lambda };
        let t = 0.7;
        let a = propagate(&tr, t, lame).unwrap();
        let b = propagate(&lo, t, lame).unwrap();
        assert!((&a - &tr.scaled((-mu * t).exp())).max_abs() < 1e-15);
        assert!((&b - &lo.scaled((-(lambda + 2.0 * mu) * t).exp())).max_abs() < 1e-15);
        assert!(propagate(&tr, -1.0, lame).is_err());
        assert!(propagate(&heat, 1.0, lame).is_err());
    }

    #[test]
    fn phi_functions_are_continuous() {
        for &z in &[-0.0999f64, -0.1001, -1e-9, -1e-7, 0.0] {
            let exact2 = if z == 0.0 {
                0.5
            } else {
                (z.exp() - 1.0 - z) / (z * z)
            };
            if z.abs() > 1e-3 {
                assert_relative_eq!(phi2(z), exact2, max_relative = 1e-12);
            }
            assert_relative_eq!(
                phi1(z),
                if z == 0.0 { 1.0 } else { z.exp_m1() / z },
                max_relative = 1e-12
            );
        }
        assert_relative_eq!(
            phi2(-0.05),
            (f64::exp(-0.05) - 1.0 + 0.05) / 0.0025,
            max_relative = 1e-12
        );
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let g = Grid::standard(2, 16).unwrap();
        let p = params();
        let stepper = Stepper::new(p).unwrap();
        let mut s = State::equilibrium(g, &p);
        for _ in 0..20 {
            s = stepper.step(&s, 0.01).unwrap();
        }
        assert!((&s.rho - &RealField::constant(g, &[1.0])).max_abs() < 1e-14);
        assert!(s.u.max_abs() < 1e-14 && s.b.max_abs() < 1e-14);
    }

    #[test]
    fn cfl_and_floor_guards() {
        let g = Grid::standard(2, 16).unwrap();
        let p = params();
        let s = State::equilibrium(g, &p);
        let limit = cfl_limit(&s, &p, DEFAULT_CFL_FACTOR);
        match step_etdrk2(&s, 10.0 * limit, &p) {
            Err(Error::CflViolation { dt, limit: l }) => assert!(dt > l),
            other => panic!("expected CFL violation, got {other:?}"),
        }
        let low = State {
            rho: RealField::constant(g, &[0.1]),
            ..s
        };
        assert!(matches!(mhd_rhs(&low, &p), Err(Error::DensityFloor { .. })));
    }

    #[test]
    fn vorticity_of_shear() {
        let g = Grid::standard(3, 16).unwrap();
        let u = RealField::from_fn(g, 3, |x, c| if c == 0 { x[1].sin() } else { 0.0 });
        let s = State::new(
            0.0,
            RealField::constant(g, &[1.0]),
            u,
            RealField::zeros(g, 3),
        )
        .unwrap();
        let ff = flux_and_vorticity(&s, &params()).unwrap();
        // ω^{1,2} = ∂_2 u^1 - ∂_1 u^2 = cos x2
        let expect = RealField::from_fn(g, 1, |x, _| x[1].cos());
        assert!((&ff.omega.extract(1) - &expect).max_abs() < 1e-13);
        assert!((&ff.omega.extract(3) + &expect).max_abs() < 1e-13);
        for d in [0, 2, 4, 5, 6, 7, 8] {
            let v = ff.omega.extract(d).max_abs();
            if d == 5 || d == 7 {
                assert!(v < 1e-13);
            } else if d % 4 == 0 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn material_derivative_cases() {
        let g = Grid::standard(2, 16).unwrap();
        let f = RealField::from_fn(g, 1, |x, _| x[0].sin());
        let u = RealField::constant(g, &[1.0, 0.0]);
        let md = material_derivative(&f, &RealField::zeros(g, 1), &u).unwrap();
        assert!((&md - &RealField::from_fn(g, 1, |x, _| x[0].cos())).max_abs() < 1e-13);
        let ft = RealField::from_fn(g, 1, |x, _| x[1].cos());
        let still = material_derivative(&f, &ft, &RealField::zeros(g, 2)).unwrap();
        assert_eq!(still, ft);
    }

    #[test]
    fn div_b_of_gradient() {
        let g = Grid::standard(3, 16).unwrap();
        let p = params();
        let b = RealField::from_fn(g, 3, |x, c| if c == 0 { x[0].cos() } else { 0.0 });
        let s = State {
            b,
            ..State::equilibrium(g, &p)
        };
        let sin = RealField::from_fn(g, 1, |x, _| x[0].sin());
        assert_relative_eq!(div_b_norm(&s), l2_norm(&sin), max_relative = 1e-12);
        assert_eq!(div_b_norm(&State::equilibrium(g, &p)), 0.0);
    }
}
