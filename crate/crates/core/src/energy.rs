//! Energy diagnostics: the time weight `σ`, the size of the data `C₀`, the
//! Hoff functionals `A₁, A₂, E, H`, the exact `L²` energy balance and the
//! blow-up indicator.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mhd::{material_derivative, mhd_rhs, PhysParams, Rhs, State, Trajectory};
use crate::spectral::{differentiate, forward, gradient_real, lp_norm, Derivative, RealField};

/// `σ(t) = min(1, t)`.
pub fn sigma(t: f64) -> f64 {
    t.min(1.0)
}

fn quadrature_weight(f: &RealField) -> f64 {
    f.grid().volume() / f.grid().len() as f64
}

/// Inhomogeneous Sobolev norm squared, `volume · Σ (1+|k|²)^s |coef|²`.
pub fn sobolev_sq(f: &RealField, s: f64) -> f64 {
    let spec = forward(f);
    let grid = *f.grid();
    let modes = grid.modes();
    let mut acc = 0.0;
    for c in 0..f.components() {
        for (idx, v) in spec.component(c).iter().enumerate() {
            acc += (1.0 + modes.k2[idx]).powf(s) * v.norm_sqr();
        }
    }
    grid.volume() * acc
}

/// `C₀ = ‖ρ₀ - ρ̄‖²_{L²} + ‖u₀‖²_{H²} + ‖B₀‖²_{H¹}`.
pub fn c0(initial: &State, params: &PhysParams) -> f64 {
    let a = initial.rho.map(|r| r - params.rho_bar);
    sobolev_sq(&a, 0.0) + sobolev_sq(&initial.u, 2.0) + sobolev_sq(&initial.b, 1.0)
}

/// `𝔈 = ∫ ½ρ|u|² + ½|B|² + Π(ρ) dx`.
pub fn total_energy(s: &State, params: &PhysParams) -> f64 {
    let um = s.u.magnitude();
    let bm = s.b.magnitude();
    let mut acc = 0.0;
    for ((r, u), b) in s.rho.data().iter().zip(um.data()).zip(bm.data()) {
        acc += 0.5 * r * u * u + 0.5 * b * b + params.pressure_potential(*r);
    }
    quadrature_weight(&s.rho) * acc
}

fn sum_sq(f: &RealField) -> f64 {
    f.data().iter().map(|v| v * v).sum()
}

fn sum_dot(f: &RealField, g: &RealField) -> f64 {
    f.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

/// `𝔇 = ∫ μ|∇u|² + (λ+μ)(div u)² + ν|∇B|² dx`.
pub fn dissipation(s: &State, params: &PhysParams) -> f64 {
    let us = forward(&s.u);
    let grad_u = gradient_real(&us);
    let div_u = differentiate(&us, Derivative::Divergence)
        .expect("state velocity")
        .to_real();
    let grad_b = gradient_real(&forward(&s.b));
    let w = quadrature_weight(&s.rho);
    w * (params.mu * sum_sq(&grad_u)
        + params.mu_prime() * sum_sq(&div_u)
        + params.nu * sum_sq(&grad_b))
}

/// `d𝔇/dt`, with the time derivatives taken from the right-hand side.
pub fn dissipation_rate(s: &State, rhs: &Rhs, params: &PhysParams) -> f64 {
    let us = forward(&s.u);
    let uts = forward(&rhs.du);
    let grad_u = gradient_real(&us);
    let grad_ut = gradient_real(&uts);
    let div_u = differentiate(&us, Derivative::Divergence)
        .expect("state velocity")
        .to_real();
    let div_ut = differentiate(&uts, Derivative::Divergence)
        .expect("state velocity")
        .to_real();
    let grad_b = gradient_real(&forward(&s.b));
    let grad_bt = gradient_real(&forward(&rhs.db));
    let w = quadrature_weight(&s.rho);
    2.0 * w
        * (params.mu * sum_dot(&grad_u, &grad_ut)
            + params.mu_prime() * sum_dot(&div_u, &div_ut)
            + params.nu * sum_dot(&grad_b, &grad_bt))
}

/// Outcome of the energy identity check along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub dissipation: Vec<f64>,
    /// `𝔈(t_{n+1}) - 𝔈(t_n) + ∫_{t_n}^{t_{n+1}} 𝔇 dt` per interval.
    pub step_residuals: Vec<f64>,
    /// `max_n |step residual|`
    pub balance_residual: f64,
    /// `Σ_n |step residual|`
    pub accumulated_residual: f64,
    /// `sup_t ∫(|ρ-ρ̄|² + ρ|u|² + |B|²) + ∫∫(|∇u|² + |∇B|²)` divided by `C₀`;
    /// `None` when `C₀ = 0`.
    pub lemma_ratio: Option<f64>,
}

/// Energy balance with the dissipation integrated by the trapezoidal rule
/// plus its Hermite end correction `h²/12 (𝔇'(t_n) - 𝔇'(t_{n+1}))`, so the
/// quadrature error is `O(h⁵)` per interval and the residual measures the
/// time integrator alone.
pub fn energy_balance(traj: &Trajectory, params: &PhysParams) -> Result<BalanceReport> {
    if traj.len() < 2 {
        return Err(Error::InsufficientSnapshots {
            needed: 2,
            have: traj.len(),
        });
    }
    let times = traj.times();
    let mut energy = Vec::with_capacity(traj.len());
    let mut diss = Vec::with_capacity(traj.len());
    let mut rate = Vec::with_capacity(traj.len());
    let mut lemma_sup: f64 = 0.0;
    let mut grad_sq = Vec::with_capacity(traj.len());
    for s in &traj.snapshots {
        let rhs = mhd_rhs(s, params)?;
        energy.push(total_energy(s, params));
        diss.push(dissipation(s, params));
        rate.push(dissipation_rate(s, &rhs, params));
        let um = s.u.magnitude();
        let bm = s.b.magnitude();
        let mut acc = 0.0;
        for ((r, u), b) in s.rho.data().iter().zip(um.data()).zip(bm.data()) {
            acc += (r - params.rho_bar).powi(2) + r * u * u + b * b;
        }
        lemma_sup = lemma_sup.max(quadrature_weight(&s.rho) * acc);
        let w = quadrature_weight(&s.rho);
        grad_sq.push(
            w * (sum_sq(&gradient_real(&forward(&s.u))) + sum_sq(&gradient_real(&forward(&s.b)))),
        );
    }
    let mut step_residuals = Vec::with_capacity(traj.len() - 1);
    let mut grad_integral = 0.0;
    for n in 0..traj.len() - 1 {
        let h = times[n + 1] - times[n];
        let quad = 0.5 * h * (diss[n] + diss[n + 1]) + h * h / 12.0 * (rate[n] - rate[n + 1]);
        step_residuals.push(energy[n + 1] - energy[n] + quad);
        grad_integral += 0.5 * h * (grad_sq[n] + grad_sq[n + 1]);
    }
    let balance_residual = step_residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let accumulated_residual = step_residuals.iter().map(|r| r.abs()).sum();
    let c0_value = c0(&traj.snapshots[0], params);
    let lemma_ratio = (c0_value > 0.0).then(|| (lemma_sup + grad_integral) / c0_value);
    Ok(BalanceReport {
        times,
        energy,
        dissipation: diss,
        step_residuals,
        balance_residual,
        accumulated_residual,
        lemma_ratio,
    })
}

/// `A₁(T)`, `A₂(T)`, `E(T)` and `H(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HoffFunctionals {
    pub a1: f64,
    pub a2: f64,
    /// Instantaneous value at the last snapshot `t <= T`, carrying `σ(T)`.
    pub e: f64,
    /// Running supremum of the instantaneous value over `[0, T]`; not part
    /// of the original definition.
    pub e_sup: f64,
    pub h: f64,
}

/// Per-snapshot integrands of the Hoff functionals.
#[derive(Debug, Clone, Copy, Default)]
struct HoffIntegrands {
    grad_sq: f64,
    rho_udot_sq: f64,
    bt_sq: f64,
    grad_udot_sq: f64,
    grad_bt_sq: f64,
    e_density: f64,
    cubes: f64,
    quartics: f64,
}

fn frobenius(g: &RealField) -> RealField {
    g.magnitude()
}

fn hoff_integrands(s: &State, params: &PhysParams) -> Result<HoffIntegrands> {
    let rhs = mhd_rhs(s, params)?;
    let udot = material_derivative(&s.u, &rhs.du, &s.u)?;
    let w = quadrature_weight(&s.rho);
    let grad_u = frobenius(&gradient_real(&forward(&s.u)));
    let grad_b = frobenius(&gradient_real(&forward(&s.b)));
    let grad_udot = gradient_real(&forward(&udot));
    let grad_bt = gradient_real(&forward(&rhs.db));
    let um = s.u.magnitude();
    let bm = s.b.magnitude();
    let udm = udot.magnitude();
    let mut rho_udot_sq = 0.0;
    let mut e_density = 0.0;
    let mut cubes = 0.0;
    let mut quartics = 0.0;
    for i in 0..s.rho.data().len() {
        let (gu, gb) = (grad_u.data()[i], grad_b.data()[i]);
        let (u2, b2) = (um.data()[i].powi(2), bm.data()[i].powi(2));
        rho_udot_sq += s.rho.data()[i] * udm.data()[i].powi(2);
        e_density += gb * gb * b2 + gb * gb * u2 + gu * gu * b2;
        cubes += gb.powi(3) + gu.powi(3);
        quartics += gb.powi(4) + gu.powi(4);
    }
    Ok(HoffIntegrands {
        grad_sq: w * (sum_sq(&grad_u) + sum_sq(&grad_b)),
        rho_udot_sq: w * rho_udot_sq,
        bt_sq: w * sum_sq(&rhs.db),
        grad_udot_sq: w * sum_sq(&grad_udot),
        grad_bt_sq: w * sum_sq(&grad_bt),
        e_density: w * e_density,
        cubes: w * cubes,
        quartics: w * quartics,
    })
}

/// Hoff functionals over the snapshots with `t <= T`. Sups are taken over
/// snapshots and time integrals use the trapezoidal rule; `u̇` is
/// `u_t + u·∇u` with `u_t` from the momentum equation.
pub fn hoff_functionals(
    traj: &Trajectory,
    t_final: f64,
    params: &PhysParams,
) -> Result<HoffFunctionals> {
    let snaps: Vec<&State> = traj
        .snapshots
        .iter()
        .filter(|s| s.t <= t_final * (1.0 + 1e-12) + 1e-300)
        .collect();
    if snaps.len() < 3 {
        return Err(Error::InsufficientSnapshots {
            needed: 3,
            have: snaps.len(),
        });
    }
    if t_final > traj.end() * (1.0 + 1e-12) {
        return Err(Error::OutOfRange {
            t: t_final,
            start: traj.start(),
            end: traj.end(),
        });
    }
    let vals: Vec<HoffIntegrands> = snaps
        .iter()
        .map(|s| hoff_integrands(s, params))
        .collect::<Result<_>>()?;
    let times: Vec<f64> = snaps.iter().map(|s| s.t).collect();
    let trapz = |f: &dyn Fn(usize) -> f64| -> f64 {
        (1..times.len())
            .map(|n| 0.5 * (times[n] - times[n - 1]) * (f(n - 1) + f(n)))
            .sum()
    };
    let sup = |f: &dyn Fn(usize) -> f64| -> f64 { (0..times.len()).map(f).fold(0.0, f64::max) };
    let sg = |n: usize| sigma(times[n]);

    let a1 = sup(&|n| vals[n].grad_sq) + trapz(&|n| vals[n].rho_udot_sq + vals[n].bt_sq);
    let a2 = sup(&|n| sg(n) * (vals[n].rho_udot_sq + vals[n].bt_sq))
        + trapz(&|n| sg(n) * (vals[n].grad_udot_sq + vals[n].grad_bt_sq));
    let last = times.len() - 1;
    let e = sg(last) * vals[last].e_density;
    let e_sup = sup(&|n| sg(n) * vals[n].e_density);
    let h = trapz(&|n| vals[n].cubes + sg(n) * vals[n].quartics);
    Ok(HoffFunctionals {
        a1,
        a2,
        e,
        e_sup,
        h,
    })
}

/// `‖ρ‖_{L^∞} + ‖u‖_{L^q} + ‖B‖_{L^q}`, `q >= 6`.
pub fn blowup_indicator(s: &State, q: f64) -> Result<f64> {
    if !(q >= 6.0) {
        return Err(Error::InvalidArgument(format!(
            "blow-up exponent must be >= 6, got {q}"
        )));
    }
    Ok(lp_norm(&s.rho, f64::INFINITY)? + lp_norm(&s.u, q)? + lp_norm(&s.b, q)?)
}

/// Every diagnostic of this module for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub c0: f64,
    pub hoff: HoffFunctionals,
    pub sigma_series: Vec<f64>,
    pub balance: BalanceReport,
    pub blowup_series: Vec<f64>,
    /// `C₀ <= ε₀` and `A₁ + A₂ <= ε₀^{1/2}`.
    pub smallness_flag: bool,
}

pub fn energy_report(
    traj: &Trajectory,
    params: &PhysParams,
    q: f64,
    eps0: f64,
) -> Result<EnergyReport> {
    let first = traj
        .snapshots
        .first()
        .ok_or(Error::InsufficientSnapshots { needed: 3, have: 0 })?;
    let c0_value = c0(first, params);
    let hoff = hoff_functionals(traj, traj.end(), params)?;
    let balance = energy_balance(traj, params)?;
    let blowup_series = traj
        .snapshots
        .iter()
        .map(|s| blowup_indicator(s, q))
        .collect::<Result<_>>()?;
    Ok(EnergyReport {
        c0: c0_value,
        hoff,
        sigma_series: traj.times().into_iter().map(sigma).collect(),
        balance,
        blowup_series,
        smallness_flag: c0_value <= eps0 && hoff.a1 + hoff.a2 <= eps0.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Grid;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn sigma_is_clamped_identity() {
        assert_eq!(sigma(0.0), 0.0);
        assert_eq!(sigma(0.25), 0.25);
        assert_eq!(sigma(1.0), 1.0);
        assert_eq!(sigma(7.0), 1.0);
    }

    #[test]
    fn c0_of_single_velocity_mode() {
        let g = Grid::standard(3, 16).unwrap();
        let p = PhysParams::default();
        let eq = State::equilibrium(g, &p);
        assert_eq!(c0(&eq, &p), 0.0);
        let eps = 0.01;
        let u = RealField::from_fn(g, 3, |x, c| if c == 0 { eps * x[0].cos() } else { 0.0 });
        let s = State {
            u: u.clone(),
            ..eq.clone()
        };
        // coefficients 1/2 at ±e1, (1+1)^2 weight
        let expect = eps * eps * (2.0 * PI).powi(3) * 4.0 * 0.5;
        assert_relative_eq!(c0(&s, &p), expect, max_relative = 1e-12);
        let s2 = State {
            u: u.scaled(2.0),
            ..eq
        };
        assert_relative_eq!(c0(&s2, &p), 4.0 * expect, max_relative = 1e-12);
    }

    #[test]
    fn equilibrium_energy_and_indicator() {
        let g = Grid::standard(2, 16).unwrap();
        let p = PhysParams::default();
        let eq = State::equilibrium(g, &p);
        assert_eq!(total_energy(&eq, &p), 0.0);
        assert_eq!(dissipation(&eq, &p), 0.0);
        assert_relative_eq!(blowup_indicator(&eq, 6.0).unwrap(), p.rho_bar);
        assert!(blowup_indicator(&eq, 4.0).is_err());
        let u = RealField::from_fn(g, 2, |x, c| if c == 1 { x[0].sin() } else { 0.0 });
        let s1 = State {
            u: u.clone(),
            ..eq.clone()
        };
        let s2 = State {
            u: u.scaled(2.0),
            ..eq
        };
        let diff = blowup_indicator(&s2, 8.0).unwrap() - blowup_indicator(&s1, 8.0).unwrap();
        assert_relative_eq!(diff, lp_norm(&u, 8.0).unwrap(), max_relative = 1e-12);
    }
}
