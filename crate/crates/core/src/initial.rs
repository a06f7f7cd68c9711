//! Initial-condition library: equilibrium, single Fourier modes, a force-free
//! decaying field and seeded random small data.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mhd::{PhysParams, State};
use crate::spectral::{differentiate, forward, Derivative, Grid, RealField, SpectralField};

/// Which unknown a single-mode perturbation is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Rho,
    U,
    B,
}

/// Named analytic families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `(ρ̄, 0, 0)`.
    Equilibrium,
    /// Equilibrium plus `amplitude·cos(m·x)` in one component.
    SingleMode {
        field: FieldKind,
        mode: [i64; 3],
        component: usize,
        amplitude: f64,
    },
    /// `u = 0`, `ρ = ρ̄`, `B = a (0, sin x₁, cos x₁)` (3-d only): `|B|` is constant
    /// and `B·∇B = 0`, so the field decays exactly like the heat equation.
    ForceFreeMode { amplitude: f64 },
    /// Smooth random data with all modes `|m_i| <= band`; `B` is a curl
    /// (or the perpendicular gradient of a stream function in 2-d).
    RandomSmall {
        rho_amplitude: f64,
        u_amplitude: f64,
        b_amplitude: f64,
        band: usize,
        seed: u64,
    },
}

impl InitialCondition {
    pub fn build(&self, grid: Grid, params: &PhysParams) -> Result<State> {
        let eq = State::equilibrium(grid, params);
        match *self {
            InitialCondition::Equilibrium => Ok(eq),
            InitialCondition::SingleMode {
                field,
                mode,
                component,
                amplitude,
            } => {
                let dim = grid.dim();
                let comps = if field == FieldKind::Rho { 1 } else { dim };
                if component >= comps {
                    return Err(Error::InvalidArgument(format!(
                        "component {component} out of range"
                    )));
                }
                if mode.iter().skip(dim).any(|&m| m != 0)
                    || mode
                        .iter()
                        .take(dim)
                        .any(|&m| m.unsigned_abs() as usize > grid.cutoff())
                {
                    return Err(Error::InvalidArgument(format!(
                        "mode {mode:?} not resolved on this grid"
                    )));
                }
                if field == FieldKind::B && mode[component] != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "B mode {mode:?} in component {component} is not divergence-free"
                    )));
                }
                let k0 = grid.base_wavenumber();
                let wave = RealField::from_fn(grid, comps, |x, c| {
                    if c == component {
                        let phase: f64 = (0..dim).map(|a| mode[a] as f64 * k0 * x[a]).sum();
                        amplitude * phase.cos()
                    } else {
                        0.0
                    }
                });
                let mut s = eq;
                match field {
                    FieldKind::Rho => s.rho += &wave,
                    FieldKind::U => s.u = wave,
                    FieldKind::B => s.b = wave,
                }
                Ok(s)
            }
            InitialCondition::ForceFreeMode { amplitude } => {
                if grid.dim() != 3 {
                    return Err(Error::InvalidArgument("force-free mode needs dim 3".into()));
                }
                let k0 = grid.base_wavenumber();
                let b = RealField::from_fn(grid, 3, |x, c| match c {
                    1 => amplitude * (k0 * x[0]).sin(),
                    2 => amplitude * (k0 * x[0]).cos(),
                    _ => 0.0,
                });
                Ok(State { b, ..eq })
            }
            InitialCondition::RandomSmall {
                rho_amplitude,
                u_amplitude,
                b_amplitude,
                band,
                seed,
            } => random_small_state(
                grid,
                params,
                rho_amplitude,
                u_amplitude,
                b_amplitude,
                band,
                seed,
            ),
        }
    }
}

/// Real zero-mean trigonometric polynomial with modes `|m_i| <= band`,
/// rescaled so its maximum modulus is `amplitude`.
pub fn random_band_limited(
    grid: Grid,
    components: usize,
    band: usize,
    amplitude: f64,
    rng: &mut impl Rng,
) -> RealField {
    let modes = grid.modes();
    let band = band as i64;
    let mut spec = SpectralField::zeros(grid, components);
    for c in 0..components {
        let dst = spec.component_mut(c);
        for (idx, m) in modes.freq.iter().enumerate() {
            if idx != 0 && m.iter().all(|v| v.abs() <= band) {
                dst[idx] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
    }
    let f = spec.to_real();
    let peak = f.max_abs();
    if peak == 0.0 {
        f
    } else {
        f.scaled(amplitude / peak)
    }
}

/// Divergence-free random field: `curl A` in 3-d, `(∂₂ψ, -∂₁ψ)` in 2-d and
/// zero in 1-d. Rescaled to maximum modulus `amplitude`.
pub fn divergence_free_random(
    grid: Grid,
    band: usize,
    amplitude: f64,
    rng: &mut impl Rng,
) -> RealField {
    let dim = grid.dim();
    let field = match dim {
        3 => {
            let a = forward(&random_band_limited(grid, 3, band, 1.0, rng));
            differentiate(&a, Derivative::Curl)
                .expect("3 components in 3-d")
                .to_real()
        }
        2 => {
            let psi = forward(&random_band_limited(grid, 1, band, 1.0, rng));
            let g = differentiate(&psi, Derivative::Gradient)
                .expect("scalar gradient")
                .to_real();
            RealField::stack(&[&g.extract(1), &g.extract(0).scaled(-1.0)]).expect("same grid")
        }
        _ => RealField::zeros(grid, dim),
    };
    let peak = field.magnitude().max_abs();
    if peak == 0.0 {
        field
    } else {
        field.scaled(amplitude / peak)
    }
}

/// `ρ = ρ̄ + δρ`, `u`, `B` random with the given peak amplitudes.
pub fn random_small_state(
    grid: Grid,
    params: &PhysParams,
    rho_amplitude: f64,
    u_amplitude: f64,
    b_amplitude: f64,
    band: usize,
    seed: u64,
) -> Result<State> {
    if band == 0 || 3 * band > grid.points_per_axis() {
        return Err(Error::InvalidArgument(format!(
            "band {band} must lie in 1..=n/3"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = grid.dim();
    let mut rho = random_band_limited(grid, 1, band, rho_amplitude, &mut rng);
    rho.data_mut().iter_mut().for_each(|v| *v += params.rho_bar);
    let u = random_band_limited(grid, dim, band, u_amplitude, &mut rng);
    let b = divergence_free_random(grid, band, b_amplitude, &mut rng);
    State::new(0.0, rho, u, b)
}
