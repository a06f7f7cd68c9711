//! Property suites run by `mhd verify`. Each check records its measured value
//! and the bound it is held to.

use clap::ValueEnum;
use mhd_core::energy::{energy_balance, hoff_functionals};
use mhd_core::initial::random_band_limited;
use mhd_core::initial::random_small_state;
use mhd_core::lagrangian::{
    algebra_residual, compute_flow_map, mass_residual, piola_residual, recover_density,
    transform_residuals,
};
use mhd_core::littlewood_paley::{
    bony_decompose, heat_estimate, phi, weight_omega, Block, DyadicFamily,
};
use mhd_core::local_solver::{fixed_point_residuals, picard_run, PicardConfig};
use mhd_core::mhd::{elliptic_residuals, PhysParams, State, Stepper, Trajectory};
use mhd_core::spectral::{forward, l2_norm, Grid, RealField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Lp,
    Lagrangian,
    Picard,
    Elliptic,
    Energy,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Lp => "lp",
            Suite::Lagrangian => "lagrangian",
            Suite::Picard => "picard",
            Suite::Elliptic => "elliptic",
            Suite::Energy => "energy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
    /// `|value - target| <= tolerance`
    Near,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub relation: Relation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            relation: Relation::AtMost,
            target: None,
            pass: value <= tolerance,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            relation: Relation::AtLeast,
            target: None,
            pass: value >= tolerance,
        }
    }

    pub fn near(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        let pass = (value - target).abs() <= tolerance;
        Self {
            name: name.into(),
            value,
            tolerance,
            relation: Relation::Near,
            target: Some(target),
            pass,
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl SuiteReport {
    fn new(suite: Suite, checks: Vec<Check>) -> Self {
        let passed = checks.iter().all(|c| c.pass);
        Self {
            suite,
            checks,
            passed,
        }
    }

    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Random fields per ensemble check.
pub const ENSEMBLE: usize = 20;

pub fn run_suite(cfg: &RunConfig, suite: Suite) -> CliResult<SuiteReport> {
    cfg.validate()?;
    let checks = match suite {
        Suite::Lp => lp_checks(cfg.grid.build()?, cfg.run.seed)?,
        Suite::Lagrangian => lagrangian_checks(cfg)?,
        Suite::Picard => picard_checks(cfg)?,
        Suite::Elliptic => elliptic_checks(cfg.grid.build()?, &cfg.params, cfg.run.seed)?,
        Suite::Energy => energy_checks(cfg)?,
    };
    Ok(SuiteReport::new(suite, checks))
}

/// Largest `|Σ_j φ(2^{-j}ξ) - 1|` over resolved nonzero frequencies.
pub fn partition_error(fam: &DyadicFamily) -> f64 {
    let modes = fam.grid().modes();
    let mut sum = vec![0.0; fam.grid().len()];
    for j in fam.shells() {
        for (s, v) in sum
            .iter_mut()
            .zip(fam.multiplier(j).expect("shell in range"))
        {
            *s += v;
        }
    }
    sum.iter()
        .enumerate()
        .skip(1)
        .filter(|(idx, _)| modes.resolved[*idx])
        .map(|(_, s)| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Largest multiplier value outside `[0, 1]` or outside the support annulus.
fn support_violation(fam: &DyadicFamily) -> f64 {
    let modes = fam.grid().modes();
    let mut worst: f64 = 0.0;
    for j in fam.shells() {
        let scale = 2f64.powi(-j);
        for (idx, v) in fam
            .multiplier(j)
            .expect("shell in range")
            .iter()
            .enumerate()
        {
            let r = modes.k2[idx].sqrt() * scale;
            let outside = !(0.75..=8.0 / 3.0).contains(&r);
            worst = worst.max(v - 1.0).max(-v);
            if outside {
                worst = worst.max(v.abs());
            }
        }
    }
    worst
}

fn random_field(grid: Grid, rng: &mut ChaCha8Rng) -> RealField {
    let data = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    RealField::from_vec(grid, 1, data).expect("sample count matches grid")
}

/// `max ‖Δ_kΔ_q u‖₂ / ‖u‖₂` over `|k - q| >= 2` and an ensemble of white-noise fields.
pub fn quasi_orthogonality(fam: &DyadicFamily, count: usize, seed: u64) -> mhd_core::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let u = random_field(*fam.grid(), &mut rng);
        let us = forward(&u);
        let norm = l2_norm(&u);
        for q in fam.shells() {
            let dq = fam.block(&us, q, Block::Delta)?;
            for k in fam.shells().filter(|k| (k - q).abs() >= 2) {
                worst = worst.max(fam.block(&dq, k, Block::Delta)?.energy().sqrt() / norm);
            }
        }
    }
    Ok(worst)
}

/// `max ‖uv - T_u v - T_v u - R(u,v)‖_∞` over random pairs in the one-third ball.
pub fn bony_error(fam: &DyadicFamily, count: usize, seed: u64) -> mhd_core::Result<f64> {
    let grid = *fam.grid();
    let band = grid.points_per_axis() / 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let u = random_band_limited(grid, 1, band, 1.0, &mut rng);
        let v = random_band_limited(grid, 1, band, 1.0, &mut rng);
        let parts = bony_decompose(fam, &u, &v)?;
        let exact = u.pointwise_mul(&v)?;
        worst = worst.max((&parts.reconstruct() - &exact).max_abs());
    }
    Ok(worst)
}

/// Heat smoothing ratios on a grid and on the same data resampled to the
/// doubled grid: `(max ratio, max relative change between resolutions)`.
pub fn heat_estimate_stability(
    grid: Grid,
    count: usize,
    seed: u64,
) -> mhd_core::Result<(f64, f64)> {
    let coarse = DyadicFamily::new(grid)?;
    let fine_grid = Grid::new(grid.dim(), 2 * grid.points_per_axis(), grid.period())?;
    let fine = DyadicFamily::new(fine_grid)?;
    let times: Vec<f64> = (0..=20).map(|i| 0.025 * i as f64).collect();
    let band = grid.cutoff() / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_ratio, mut max_change): (f64, f64) = (0.0, 0.0);
    for _ in 0..count {
        let v0 = random_band_limited(grid, 1, band, 1.0, &mut rng);
        let f = random_band_limited(grid, 1, band, 1.0, &mut rng);
        let lift = |g: &RealField| forward(g).resample(fine_grid).map(|s| s.to_real());
        let a = heat_estimate(&coarse, &v0, &f, 1.0, &times, 0.0, 2.0)?;
        let b = heat_estimate(&fine, &lift(&v0)?, &lift(&f)?, 1.0, &times, 0.0, 2.0)?;
        max_ratio = max_ratio.max(if a.ratio.is_finite() {
            a.ratio
        } else {
            f64::INFINITY
        });
        max_change = max_change.max((b.ratio / a.ratio - 1.0).abs());
    }
    Ok((max_ratio, max_change))
}

/// Largest violation of `ω_k <= 2`, `ω_k <= 2^{k-k'}ω_{k'}` (`k >= k'`),
/// `ω_k <= 3ω_{k'}` (`k <= k'`) and monotonicity in `t` on a lattice.
pub fn omega_violation(c: f64) -> f64 {
    let ts = [0.0, 1e-3, 0.01, 0.1, 0.5, 1.0, 5.0];
    let mut worst: f64 = 0.0;
    for k in -1..8 {
        for (i, &t) in ts.iter().enumerate() {
            let w = weight_omega(k, t, c);
            worst = worst.max(w - 2.0).max(-w);
            if i > 0 {
                worst = worst.max(weight_omega(k, ts[i - 1], c) - w);
            }
            for k2 in -1..8 {
                let w2 = weight_omega(k2, t, c);
                if k >= k2 {
                    worst = worst.max(w - 2f64.powi(k - k2) * w2);
                }
                if k <= k2 {
                    worst = worst.max(w - 3.0 * w2);
                }
            }
        }
    }
    worst
}

fn lp_checks(grid: Grid, seed: u64) -> CliResult<Vec<Check>> {
    let fam = DyadicFamily::new(grid)?;
    let (heat_max, heat_change) = heat_estimate_stability(grid, ENSEMBLE, seed.wrapping_add(2))?;
    Ok(vec![
        Check::at_most("partition_of_unity", partition_error(&fam), 1e-12),
        Check::at_most("multiplier_support", support_violation(&fam), 0.0),
        Check::at_most("phi_outside_annulus", phi(0.5).max(phi(3.0)), 0.0),
        Check::at_most(
            "quasi_orthogonality",
            quasi_orthogonality(&fam, ENSEMBLE, seed)?,
            1e-12,
        ),
        Check::at_most(
            "bony_reconstruction",
            bony_error(&fam, ENSEMBLE, seed.wrapping_add(1))?,
            1e-10,
        ),
        Check::at_most("heat_estimate_ratio", heat_max, 50.0),
        Check::at_most("heat_estimate_resolution_change", heat_change, 0.2),
        Check::at_most("omega_properties", omega_violation(1.0), 1e-12),
    ])
}

/// Largest relative elliptic residuals `(r_F, r_ω)` over an ensemble of
/// random band-limited states.
pub fn elliptic_ensemble(
    grid: Grid,
    params: &PhysParams,
    count: usize,
    seed: u64,
) -> mhd_core::Result<(f64, f64)> {
    let band = (grid.points_per_axis() / 3).min(5);
    let (mut rf, mut ro): (f64, f64) = (0.0, 0.0);
    for i in 0..count as u64 {
        let s = random_small_state(grid, params, 0.2, 0.5, 0.5, band, seed.wrapping_add(i))?;
        let r = elliptic_residuals(&s, params)?;
        rf = rf.max(r.r_flux);
        ro = ro.max(r.r_omega);
    }
    Ok((rf, ro))
}

fn elliptic_checks(grid: Grid, params: &PhysParams, seed: u64) -> CliResult<Vec<Check>> {
    let (rf, ro) = elliptic_ensemble(grid, params, ENSEMBLE, seed)?;
    let eq = elliptic_residuals(&State::equilibrium(grid, params), params)?;
    let mut checks = vec![
        Check::at_most("r_flux", rf, 1e-8),
        Check::at_most("r_omega", ro, 1e-8),
        Check::at_most("equilibrium_r_flux", eq.r_flux, 0.0),
    ];
    if grid.dim() == 1 {
        checks.retain(|c| c.name != "r_omega");
    }
    Ok(checks)
}

/// Solver run from the configured initial state, every step stored.
pub fn solve(cfg: &RunConfig, initial: &State, dt: f64) -> CliResult<Trajectory> {
    let steps = (cfg.time.t_end / dt).round() as usize;
    Ok(Stepper::new(cfg.params)?
        .with_cfl_factor(cfg.time.cfl_factor)
        .run(initial, dt, steps, 1)?)
}

/// Refines the grid and step of a config by a factor of two.
pub fn refined(cfg: &RunConfig) -> RunConfig {
    let mut fine = cfg.clone();
    fine.grid.points_per_axis *= 2;
    fine.time.dt /= 2.0;
    fine
}

/// Transform residuals at `t_end` for a config, as `(relative, run)`.
pub fn transform_at_end(cfg: &RunConfig) -> CliResult<([f64; 5], Trajectory)> {
    let traj = solve(cfg, &cfg.initial_state()?, cfg.time.dt)?;
    let fm = compute_flow_map(&traj, cfg.time.t_end)?;
    let tr = transform_residuals(traj.last().expect("run stores its end"), &fm)?;
    Ok((tr.relative, traj))
}

/// Lagrangian mass residuals at the midpoint of `[0, t_end]` for `dt`,
/// `dt/2`, `dt/4`, with the observed orders between consecutive pairs.
pub fn mass_convergence(cfg: &RunConfig) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let initial = cfg.initial_state()?;
    let mid = 0.5 * cfg.time.t_end;
    let residuals = [1.0, 0.5, 0.25]
        .iter()
        .map(|f| Ok(mass_residual(&solve(cfg, &initial, cfg.time.dt * f)?, mid)?))
        .collect::<CliResult<Vec<f64>>>()?;
    let orders = residuals.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok((residuals, orders))
}

fn lagrangian_checks(cfg: &RunConfig) -> CliResult<Vec<Check>> {
    if cfg.time.steps() < 2 {
        return Err(CliError::Config(
            "the lagrangian suite needs at least two time steps".into(),
        ));
    }
    let t = cfg.time.t_end;
    let (coarse, traj) = transform_at_end(cfg)?;
    let fm = compute_flow_map(&traj, t)?;
    let (fine, _) = transform_at_end(&refined(cfg))?;
    let names = [
        "grad_b2",
        "b_dot_grad_b",
        "div_u_b",
        "div_u_b_plus_advection",
        "b_dot_grad_u",
    ];
    let mut checks = vec![
        Check::at_least("min_jacobian", fm.min_jacobian(), f64::MIN_POSITIVE),
        Check::at_most("piola", piola_residual(&fm), 1e-8),
        Check::at_most("algebra", algebra_residual(&fm), 1e-10),
    ];
    for i in 0..5 {
        checks.push(Check::at_most(
            format!("transform_{}", names[i]),
            coarse[i],
            1e-4,
        ));
        let gain = if fine[i] > 0.0 {
            coarse[i] / fine[i]
        } else {
            f64::INFINITY
        };
        checks.push(Check::at_least(
            format!("transform_{}_refinement_gain", names[i]),
            gain,
            4.0,
        ));
    }
    let (mass, orders) = mass_convergence(cfg)?;
    checks.push(Check::at_most("mass_conservation", mass[2], 1e-5));
    for (i, order) in orders.into_iter().enumerate() {
        checks.push(Check::near(
            format!("mass_convergence_order_{}", i + 1),
            order,
            2.0,
            0.3,
        ));
    }
    let (_, rho) = recover_density(&traj.snapshots[0].rho, &fm)?;
    let direct = &traj.last().expect("run stores its end").rho;
    checks.push(Check::at_most(
        "recovered_density",
        l2_norm(&(&rho - direct)) / l2_norm(direct),
        1e-3,
    ));
    Ok(checks)
}

/// Picard fixed point from a state and its distance to the Eulerian solve at
/// the same grid and step.
pub struct PicardCheck {
    pub report: mhd_core::local_solver::PicardReport,
    pub residuals: mhd_core::local_solver::FixedPointResiduals,
    pub cross_validation: f64,
}

pub fn picard_check(s0: &State, params: &PhysParams, pc: &PicardConfig) -> CliResult<PicardCheck> {
    let out = picard_run(&s0.rho, &s0.u, &s0.b, params, pc)?;
    let residuals = fixed_point_residuals(&out.solution, &s0.rho, params)?;
    let last = out.solution.times.len() - 1;
    let lagr = out.solution.eulerian_state(&s0.rho, last)?;
    let direct = Stepper::new(*params)?.run(
        s0,
        out.solution.times[1] - out.solution.times[0],
        last,
        last,
    )?;
    let d = direct.last().expect("run stores its end");
    let rel = |a: &RealField, b: &RealField| {
        let den = l2_norm(b);
        let num = l2_norm(&(a - b));
        if num == 0.0 {
            0.0
        } else {
            num / den.max(f64::MIN_POSITIVE)
        }
    };
    let cross_validation = rel(&lagr.u, &d.u)
        .max(rel(&lagr.b, &d.b))
        .max(rel(&lagr.rho, &d.rho));
    Ok(PicardCheck {
        report: out.report,
        residuals,
        cross_validation,
    })
}

fn picard_checks(cfg: &RunConfig) -> CliResult<Vec<Check>> {
    let s0 = cfg.initial_state()?;
    cfg.picard.validate(s0.grid().dim())?;
    let pc = picard_check(&s0, &cfg.params, &cfg.picard)?;
    let r = &pc.report;
    let worst_ratio = r.ratios.iter().skip(1).copied().fold(0.0, f64::max);
    Ok(vec![
        Check::flag("converged", r.converged),
        Check::at_most(
            "iterations",
            r.iterations as f64,
            cfg.picard.max_iterations as f64,
        ),
        Check::at_most("contraction_ratio", worst_ratio, 0.6),
        Check::flag("ball_condition", r.all_in_ball),
        Check::flag("smallness_condition", r.all_small),
        Check::at_most("momentum_residual", pc.residuals.momentum, 1e-3),
        Check::at_most("induction_residual", pc.residuals.induction, 1e-3),
        Check::at_most("gauge_residual", pc.residuals.gauge, 1e-3),
        Check::at_most("cross_validation", pc.cross_validation, 1e-3),
    ])
}

/// Least-squares slope of `log residual` against `log dt`.
pub fn loglog_slope(dts: &[f64], values: &[f64]) -> f64 {
    let xs: Vec<f64> = dts.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Accumulated energy-balance residuals at `dt`, `dt/2`, `dt/4`.
pub fn energy_convergence(cfg: &RunConfig) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let initial = cfg.initial_state()?.truncated();
    let dts: Vec<f64> = [1.0, 0.5, 0.25].iter().map(|f| cfg.time.dt * f).collect();
    let residuals = dts
        .iter()
        .map(
            |&dt| Ok(energy_balance(&solve(cfg, &initial, dt)?, &cfg.params)?.accumulated_residual),
        )
        .collect::<CliResult<Vec<f64>>>()?;
    Ok((dts, residuals))
}

fn energy_checks(cfg: &RunConfig) -> CliResult<Vec<Check>> {
    if cfg.time.steps() < 2 {
        return Err(CliError::Config(
            "the energy suite needs at least two time steps".into(),
        ));
    }
    let (dts, residuals) = energy_convergence(cfg)?;
    let slope = loglog_slope(&dts, &residuals);
    let grid = cfg.grid.build()?;
    let eq = solve(cfg, &State::equilibrium(grid, &cfg.params), cfg.time.dt)?;
    let hf = hoff_functionals(&eq, cfg.time.t_end, &cfg.params)?;
    let traj = solve(cfg, &cfg.initial_state()?.truncated(), cfg.time.dt)?;
    let mut monotone_gap: f64 = 0.0;
    let mut prev = [0.0; 3];
    for s in traj.snapshots.iter().skip(2) {
        let h = hoff_functionals(&traj, s.t, &cfg.params)?;
        let cur = [h.a1, h.a2, h.h];
        for (p, c) in prev.iter().zip(cur) {
            monotone_gap = monotone_gap.max(p - c);
        }
        prev = cur;
    }
    Ok(vec![
        Check::near("balance_convergence_slope", slope, 2.0, 0.3),
        Check::at_most(
            "equilibrium_hoff",
            hf.a1.max(hf.a2).max(hf.h).max(hf.e),
            1e-20,
        ),
        Check::at_most("hoff_monotone_gap", monotone_gap, 0.0),
    ])
}
