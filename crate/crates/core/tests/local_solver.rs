use mhd_core::initial::random_small_state;
use mhd_core::lagrangian::FlowMap;
use mhd_core::local_solver::{
    fixed_point_residuals, free_solutions, lagrangian_flow, phi_map, picard_run, preflight,
    source_terms, time_derivative, PicardConfig,
};
use mhd_core::mhd::{PhysParams, State, Stepper};
use mhd_core::spectral::{differentiate, forward, l2_norm, Derivative, Grid, RealField};
use mhd_core::Error;

fn params() -> PhysParams {
    PhysParams {
        mu: 0.1,
        lambda: 0.05,
        nu: 0.08,
        pressure_a: 1.0,
        pressure_gamma: 1.4,
        rho_bar: 1.0,
        c0_floor: 0.5,
    }
}

fn config(dt: f64) -> PicardConfig {
    PicardConfig {
        p: 2.0,
        dt,
        horizon: 0.1,
        ..Default::default()
    }
}

fn small_data(n: usize) -> State {
    random_small_state(
        Grid::standard(2, n).unwrap(),
        &params(),
        0.05,
        0.2,
        0.2,
        3,
        11,
    )
    .unwrap()
}

#[test]
fn free_solutions_follow_mode_decay() {
    let g = Grid::standard(2, 16).unwrap();
    let p = params();
    let times = [0.0, 0.3, 1.0];
    let zero = RealField::zeros(g, 2);
    let (ul, bl) = free_solutions(&zero, &zero, &p, &times).unwrap();
    assert!(ul.iter().chain(&bl).all(|f| f.max_abs() == 0.0));

    // transverse velocity mode and a solenoidal magnetic mode
    let u0 = RealField::from_fn(g, 2, |x, c| if c == 0 { (2.0 * x[1]).sin() } else { 0.0 });
    let b0 = RealField::from_fn(g, 2, |x, c| if c == 1 { x[0].cos() } else { 0.0 });
    let (ul, bl) = free_solutions(&u0, &b0, &p, &times).unwrap();
    for (i, &t) in times.iter().enumerate() {
        let ue = u0.scaled((-p.mu * 4.0 * t).exp());
        let be = b0.scaled((-p.nu * t).exp());
        assert!((&ul[i] - &ue).max_abs() < 1e-13);
        assert!((&bl[i] - &be).max_abs() < 1e-13);
    }
}

#[test]
fn sources_vanish_without_magnetic_field() {
    let s = small_data(16);
    let p = params();
    let times: Vec<f64> = (0..=4).map(|i| 0.025 * i as f64).collect();
    let v: Vec<RealField> = times.iter().map(|t| s.u.scaled(1.0 + t)).collect();
    let maps = lagrangian_flow(&times, &v).unwrap();
    let dv = time_derivative(&times, &v).unwrap();
    let zero = RealField::zeros(*s.grid(), 2);
    let src = source_terms(&v[4], &zero, &dv[4], &zero, &s.rho, &maps[4], &p).unwrap();
    for f in [
        &src.i5, &src.i6, &src.i7, &src.i8, &src.i9, &src.i10, &src.i11,
    ] {
        assert_eq!(f.max_abs(), 0.0);
    }
    assert!(src.i1.max_abs() > 0.0 && src.i3.max_abs() > 0.0);
}

/// `I₁ = (1−J)∂ₜv` against its first-order expansion `−(∫div v)∂ₜv`.
#[test]
fn first_source_matches_linearization() {
    let s = small_data(16);
    let p = params();
    let times: Vec<f64> = (0..=4).map(|i| 0.025 * i as f64).collect();
    let errors: Vec<f64> = [0.2, 0.1]
        .iter()
        .map(|&eps| {
            let v: Vec<RealField> = times.iter().map(|t| s.u.scaled(eps * (1.0 + t))).collect();
            let maps = lagrangian_flow(&times, &v).unwrap();
            let dv = time_derivative(&times, &v).unwrap();
            let src = source_terms(&v[4], &s.b, &dv[4], &s.b, &s.rho, &maps[4], &p).unwrap();
            let disp = &maps[4].displacement;
            let div = differentiate(&forward(disp), Derivative::Divergence)
                .unwrap()
                .to_real();
            let linear = dv[4].pointwise_mul(&div).unwrap().scaled(-1.0);
            l2_norm(&(&src.i1 - &linear))
        })
        .collect();
    let order = (errors[0] / errors[1]).log2();
    assert!((2.7..=3.3).contains(&order), "{errors:?}");
}

#[test]
fn phi_fixes_equilibrium_and_decouples_magnetic_field() {
    let g = Grid::standard(2, 16).unwrap();
    let p = params();
    let cfg = config(0.01);
    let n = cfg.time_grid().len();
    let eq = State::equilibrium(g, &p);
    let zeros = vec![RealField::zeros(g, 2); n];
    let (u, b) = phi_map(&zeros, &zeros, &eq.rho, &eq.u, &eq.b, &p, &cfg).unwrap();
    assert!(u.iter().chain(&b).all(|f| f.max_abs() == 0.0));

    let s = small_data(16);
    let (ul, _) = free_solutions(&s.u, &eq.b, &p, &cfg.time_grid()).unwrap();
    let (_, b) = phi_map(&ul, &zeros, &s.rho, &s.u, &eq.b, &p, &cfg).unwrap();
    assert!(b.iter().all(|f| f.max_abs() == 0.0));
}

#[test]
fn equilibrium_converges_in_one_iteration() {
    let g = Grid::standard(2, 16).unwrap();
    let eq = State::equilibrium(g, &params());
    let out = picard_run(&eq.rho, &eq.u, &eq.b, &params(), &config(0.01)).unwrap();
    assert!(out.report.converged);
    assert_eq!(out.report.iterations, 1);
    assert!(out.solution.u.iter().all(|f| f.max_abs() == 0.0));
}

#[test]
fn small_data_contracts_geometrically() {
    let s = small_data(32);
    let out = picard_run(&s.rho, &s.u, &s.b, &params(), &config(0.005)).unwrap();
    let r = &out.report;
    assert!(r.all_in_ball && r.all_small);
    assert!(r.converged && r.iterations <= 25, "{r:?}");
    assert!(r.ratios.iter().skip(1).all(|&q| q <= 0.6), "{:?}", r.ratios);
    for (n, d) in r.differences.iter().enumerate() {
        assert!(*d <= 0.6f64.powi(n as i32) * r.differences[0] * (1.0 + 1e-12));
    }
    let res = fixed_point_residuals(&out.solution, &s.rho, &params()).unwrap();
    assert!(
        res.momentum <= 1e-3 && res.induction <= 1e-3 && res.gauge <= 1e-3,
        "{res:?}"
    );
}

fn eulerian_mismatch(n: usize, dt: f64) -> f64 {
    let s = small_data(n);
    let p = params();
    let out = picard_run(&s.rho, &s.u, &s.b, &p, &config(dt)).unwrap();
    let last = out.solution.times.len() - 1;
    let lagr = out.solution.eulerian_state(&s.rho, last).unwrap();
    let steps = last;
    let direct = Stepper::new(p).unwrap().run(&s, dt, steps, steps).unwrap();
    let d = direct.last().unwrap();
    let rel = |a: &RealField, b: &RealField| l2_norm(&(a - b)) / l2_norm(b);
    rel(&lagr.u, &d.u)
        .max(rel(&lagr.b, &d.b))
        .max(rel(&lagr.rho, &d.rho))
}

#[test]
fn fixed_point_matches_eulerian_solver() {
    let coarse = eulerian_mismatch(16, 0.01);
    let fine = eulerian_mismatch(32, 0.005);
    assert!(fine <= 1e-3, "{fine}");
    assert!(fine < coarse, "{coarse} -> {fine}");
}

#[test]
fn large_data_violates_smallness() {
    let s = small_data(16);
    let p = params();
    let cfg = config(0.01);
    let (_, base) = preflight(&s.rho, &s.u, &s.b, &p, &cfg).unwrap();
    assert!(base.small_ok);
    let factor = 100.0 * cfg.small_c / base.gradient_integral;
    let big_u = s.u.scaled(factor);
    let (_, big) = preflight(&s.rho, &big_u, &s.b, &p, &cfg).unwrap();
    assert!(!big.small_ok);
    assert!((big.gradient_integral / cfg.small_c - 100.0).abs() < 1e-6);
}

#[test]
fn divergent_iteration_is_reported() {
    let g = Grid::standard(2, 16).unwrap();
    let p = params();
    let s = random_small_state(g, &p, 0.05, 0.05, 0.05, 3, 11).unwrap();
    let cfg = PicardConfig {
        p: 2.0,
        dt: 0.02,
        horizon: 2.0,
        max_iterations: 15,
        ..Default::default()
    };
    let err = picard_run(&s.rho, &s.u, &s.b, &p, &cfg).unwrap_err();
    assert!(matches!(err, Error::NonConvergence { streak: 3 }), "{err}");
}

#[test]
fn low_density_is_rejected() {
    let g = Grid::standard(2, 16).unwrap();
    let p = params();
    let eq = State::equilibrium(g, &p);
    let thin = RealField::constant(g, &[0.1]);
    let err = picard_run(&thin, &eq.u, &eq.b, &p, &config(0.01)).unwrap_err();
    assert!(matches!(err, Error::DensityFloor { .. }));
    let id = FlowMap::identity(g, 0.0);
    assert_eq!(id.min_jacobian(), 1.0);
}
