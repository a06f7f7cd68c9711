use mhd_core::initial::random_band_limited;
use mhd_core::littlewood_paley::{
    besov_norm, bony_decompose, chemin_lerner_norm, heat_estimate, lebesgue_besov_norm,
    weight_omega, BesovSpec, Block, DyadicFamily,
};
use mhd_core::spectral::{differentiate, forward, l2_norm, Derivative, Grid, RealField};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn family(dim: usize, n: usize) -> DyadicFamily {
    DyadicFamily::new(Grid::standard(dim, n).unwrap()).unwrap()
}

fn shell_sum(fam: &DyadicFamily) -> Vec<f64> {
    let mut sum = vec![0.0; fam.grid().len()];
    for j in fam.shells() {
        for (s, v) in sum.iter_mut().zip(fam.multiplier(j).unwrap()) {
            *s += v;
        }
    }
    sum
}

#[test]
fn partition_of_unity_on_reference_grids() {
    for (dim, n) in [(3, 32), (2, 128)] {
        let fam = family(dim, n);
        let modes = fam.grid().modes();
        let sum = shell_sum(&fam);
        for (idx, s) in sum.iter().enumerate().skip(1) {
            if modes.resolved[idx] {
                assert!(
                    (s - 1.0).abs() <= 1e-12,
                    "{dim}d {n}: {:?} -> {s}",
                    modes.freq[idx]
                );
            }
        }
        assert_eq!(sum[0], 0.0);
    }
}

#[test]
fn quasi_orthogonality_for_random_fields() {
    let fam = family(3, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let u = RealField::from_vec(
            *fam.grid(),
            1,
            (0..fam.grid().len())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let us = forward(&u);
        let norm = l2_norm(&u);
        for q in fam.shells() {
            let dq = fam.block(&us, q, Block::Delta).unwrap();
            for k in fam.shells().filter(|k| (k - q).abs() >= 2) {
                let both = fam.block(&dq, k, Block::Delta).unwrap();
                assert!(both.energy().sqrt() <= 1e-12 * norm, "k={k} q={q}");
            }
        }
    }
}

#[test]
fn blocks_reconstruct_the_mean_free_field() {
    let fam = family(2, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = random_band_limited(*fam.grid(), 1, 31, 1.0, &mut rng);
    let us = forward(&u);
    let mut total = us.scaled(0.0);
    for j in fam.shells() {
        total.axpy(1.0, &fam.block(&us, j, Block::Delta).unwrap());
    }
    let err = l2_norm(&(&total.to_real() - &u.without_mean()));
    assert!(err <= 1e-12 * l2_norm(&u));

    let low = fam
        .block(&us, fam.j_max() + 1, Block::SLow)
        .unwrap()
        .to_real();
    assert!((&low - &u).max_abs() <= 1e-12);
}

#[test]
fn bony_reconstructs_products_in_the_third_ball() {
    for (dim, n) in [(2, 32), (3, 16)] {
        let fam = family(dim, n);
        let mut rng = ChaCha8Rng::seed_from_u64(3 + dim as u64);
        for _ in 0..20 {
            let u = random_band_limited(*fam.grid(), 1, n / 6, 1.0, &mut rng);
            let v = random_band_limited(*fam.grid(), 1, n / 6, 1.0, &mut rng);
            let parts = bony_decompose(&fam, &u, &v).unwrap();
            let exact = u.pointwise_mul(&v).unwrap();
            assert!((&parts.reconstruct() - &exact).max_abs() <= 1e-10);
            assert!(parts.mean_product.abs() < 1e-20);
        }
    }
}

#[test]
fn bernstein_scaling_per_shell() {
    let fam = family(2, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = forward(&random_band_limited(*fam.grid(), 1, 31, 1.0, &mut rng));
    for j in fam.shells().filter(|&j| j >= 0 && j < fam.j_max()) {
        let block = fam.block(&u, j, Block::Delta).unwrap();
        let norm = block.energy().sqrt();
        if norm < 1e-10 {
            continue;
        }
        let grad = differentiate(&block, Derivative::Gradient)
            .unwrap()
            .energy()
            .sqrt();
        let scale = 2f64.powi(j);
        assert!(
            (0.75 * scale..=8.0 / 3.0 * scale).contains(&(grad / norm)),
            "j={j}"
        );
    }
}

fn random_path(grid: Grid, count: usize, seed: u64) -> (Vec<f64>, Vec<RealField>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_band_limited(grid, 1, 10, 1.0, &mut rng);
    let b = random_band_limited(grid, 1, 10, 1.0, &mut rng);
    let times: Vec<f64> = (0..count).map(|i| 0.1 * i as f64).collect();
    let fields = times
        .iter()
        .map(|&t| &a.scaled((3.0 * t).cos()) + &b.scaled(t * t))
        .collect();
    (times, fields)
}

#[test]
fn chemin_lerner_dominates_integrated_norm() {
    let fam = family(2, 32);
    for seed in 0..5 {
        let (times, fields) = random_path(*fam.grid(), 11, seed);
        let refs: Vec<&RealField> = fields.iter().collect();
        for rho in [1.0, 2.0, f64::INFINITY] {
            let tilde = chemin_lerner_norm(&fam, &times, &refs, 0.5, 2.0, rho).unwrap();
            let plain = lebesgue_besov_norm(&fam, &times, &refs, 0.5, 2.0, rho).unwrap();
            assert!(tilde.value >= plain.value * (1.0 - 1e-12), "rho={rho}");
            assert!((tilde.max_step - 0.1).abs() < 1e-12);
        }
    }
}

#[test]
fn interpolation_inequality_holds() {
    let fam = family(2, 32);
    let (times, fields) = random_path(*fam.grid(), 11, 9);
    let refs: Vec<&RealField> = fields.iter().collect();
    let norm = |s, r| {
        chemin_lerner_norm(&fam, &times, &refs, s, 2.0, r)
            .unwrap()
            .value
    };
    for (theta, r1, r2, s1, s2) in [
        (0.5, 1.0, f64::INFINITY, 2.0, 0.0),
        (0.3, 2.0, 4.0, -1.0, 1.5),
        (0.8, 1.0, 1.0, 0.0, 1.0),
    ] {
        let r = 1.0 / (theta / r1 + (1.0 - theta) / r2);
        let s = theta * s1 + (1.0 - theta) * s2;
        let lhs = norm(s, r);
        let rhs = norm(s1, r1).powf(theta) * norm(s2, r2).powf(1.0 - theta);
        assert!(lhs <= rhs * (1.0 + 1e-12), "{lhs} > {rhs}");
    }
}

#[test]
fn heat_estimate_is_bounded_and_resolution_stable() {
    let coarse = family(2, 32);
    let fine = family(2, 64);
    let times: Vec<f64> = (0..=20).map(|i| 0.025 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let v0 = random_band_limited(*coarse.grid(), 1, 8, 1.0, &mut rng);
        let f = random_band_limited(*coarse.grid(), 1, 8, 1.0, &mut rng);
        let lift = |g: &RealField| forward(g).resample(*fine.grid()).unwrap().to_real();
        let a = heat_estimate(&coarse, &v0, &f, 1.0, &times, 0.0, 2.0).unwrap();
        let b = heat_estimate(&fine, &lift(&v0), &lift(&f), 1.0, &times, 0.0, 2.0).unwrap();
        assert!(
            a.ratio.is_finite() && a.ratio > 0.0 && a.ratio <= 50.0,
            "{a:?}"
        );
        assert!((b.ratio / a.ratio - 1.0).abs() <= 0.2, "{a:?} vs {b:?}");
    }
}

#[test]
fn besov_two_two_matches_block_oracle() {
    let fam = family(2, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let u = random_band_limited(*fam.grid(), 1, 15, 1.0, &mut rng);
    let us = forward(&u);
    let oracle: f64 = fam
        .shells()
        .map(|j| fam.block(&us, j, Block::Delta).unwrap().energy())
        .sum::<f64>()
        .sqrt();
    let value = besov_norm(&fam, &u, &BesovSpec::new(0.0, 2.0, 2.0).unwrap()).unwrap();
    assert!((value - oracle).abs() <= 1e-12 * oracle);
    assert!((value / l2_norm(&u) - 1.0).abs() < 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn omega_lattice_properties(k in -2i32..8, dk in 0i32..6, t in 0.0f64..3.0, c in 0.01f64..2.0) {
        let k2 = k + dk;
        let wk = weight_omega(k, t, c);
        let wk2 = weight_omega(k2, t, c);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&wk));
        prop_assert!(wk2 <= 2f64.powi(dk) * wk * (1.0 + 1e-12) + 1e-300);
        prop_assert!(wk <= 3.0 * wk2 * (1.0 + 1e-12) + 1e-300);
        prop_assert!(weight_omega(k, t + 0.1, c) >= wk);
    }
}
