//! Flow maps of a velocity trajectory and the change of variables between
//! Eulerian and Lagrangian coordinates.
//!
//! `X(t, y) = y + ∫₀ᵗ u(τ, X(τ, y)) dτ`. Matrix fields are stored with
//! component `i*dim + j` holding the `(i, j)` entry; `DX_{ij} = ∂X_i/∂y_j`.
//! Divergences of matrix fields act on the first index:
//! `(div M)_k = Σ_j ∂_j M_{jk}`. With this convention the Piola identity reads
//! `div_y adj(DX) = 0` and every Eulerian divergence transforms as
//! `(div_x M)∘X = J⁻¹ div_y(adj(DX) M̃)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mhd::{dot_grad, State, Trajectory};
use crate::spectral::{
    differentiate, forward, l2_norm, Derivative, Grid, RealField, SpectralField,
};

/// Coefficients smaller than this fraction of the largest one are treated as
/// transform round-off and skipped by the interpolants.
const COEF_THRESHOLD: f64 = 1e-15;

/// Evaluates trigonometric polynomials at arbitrary points using the
/// Hermitian half of the spectrum: `f(x) = c₀ + 2 Re Σ_{m ∈ half} c_m e^{i k·x}`.
#[derive(Debug, Clone)]
struct ModeSum {
    grid: Grid,
    comps: usize,
    /// Half-space modes (mean excluded) carrying a non-negligible coefficient.
    modes: Vec<[i64; 3]>,
    /// Flat index of each mode.
    index: Vec<usize>,
    /// Runs `[start, end)` of modes whose first frequency increases by one
    /// while the others stay fixed.
    runs: Vec<(usize, usize)>,
    max_freq: usize,
}

/// Gathered coefficients, split into real and imaginary parts and laid out
/// as `[component][mode]`.
#[derive(Debug, Clone)]
struct Coefs {
    re: Vec<f64>,
    im: Vec<f64>,
    means: Vec<f64>,
}

impl Coefs {
    fn zeros(modes: usize, comps: usize) -> Self {
        Self {
            re: vec![0.0; modes * comps],
            im: vec![0.0; modes * comps],
            means: vec![0.0; comps],
        }
    }

    fn axpy(&mut self, w: f64, other: &Coefs) {
        for (a, b) in self.re.iter_mut().zip(&other.re) {
            *a += w * b;
        }
        for (a, b) in self.im.iter_mut().zip(&other.im) {
            *a += w * b;
        }
        for (a, b) in self.means.iter_mut().zip(&other.means) {
            *a += w * b;
        }
    }
}

/// Per-point tables of `e^{i m k₀ x_a}` for `m = -kmax..=kmax`.
#[derive(Debug, Default)]
struct PhaseTables {
    re: [Vec<f64>; 3],
    im: [Vec<f64>; 3],
}

/// `Σ (a + ib)(c + id)` with four independent accumulators.
fn complex_dot(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> (f64, f64) {
    let n = a.len();
    let (mut sr, mut si) = ([0.0; 4], [0.0; 4]);
    let chunks = n / 4;
    for k in 0..chunks {
        for l in 0..4 {
            let i = 4 * k + l;
            sr[l] += a[i] * c[i] - b[i] * d[i];
            si[l] += a[i] * d[i] + b[i] * c[i];
        }
    }
    for i in 4 * chunks..n {
        sr[0] += a[i] * c[i] - b[i] * d[i];
        si[0] += a[i] * d[i] + b[i] * c[i];
    }
    (sr[0] + sr[1] + sr[2] + sr[3], si[0] + si[1] + si[2] + si[3])
}

fn in_half_space(m: [i64; 3]) -> bool {
    for &v in m.iter().rev() {
        if v != 0 {
            return v > 0;
        }
    }
    false
}

impl ModeSum {
    /// Modes where any of the given fields has a coefficient above the
    /// round-off threshold.
    fn for_fields(fields: &[&SpectralField]) -> Self {
        let grid = *fields[0].grid();
        let comps = fields[0].components();
        let table = grid.modes();
        let peak = fields.iter().map(|f| f.max_abs()).fold(0.0, f64::max);
        let cut = COEF_THRESHOLD * peak;
        let mut candidates = Vec::new();
        let mut max_freq = 0usize;
        for idx in 1..grid.len() {
            let m = table.freq[idx];
            if !table.resolved[idx] || !in_half_space(m) {
                continue;
            }
            let keep = fields
                .iter()
                .any(|f| (0..comps).any(|c| f.component(c)[idx].norm() > cut));
            if keep {
                candidates.push((m, idx));
                max_freq = max_freq.max(
                    m.iter()
                        .map(|v| v.unsigned_abs() as usize)
                        .max()
                        .unwrap_or(0),
                );
            }
        }
        candidates.sort_by_key(|&(m, _)| (m[2], m[1], m[0]));
        let (modes, index): (Vec<[i64; 3]>, Vec<usize>) = candidates.into_iter().unzip();
        let mut runs = Vec::new();
        let mut start = 0;
        for n in 1..=modes.len() {
            let breaks = n == modes.len()
                || modes[n][1..] != modes[n - 1][1..]
                || modes[n][0] != modes[n - 1][0] + 1;
            if breaks {
                runs.push((start, n));
                start = n;
            }
        }
        Self {
            grid,
            comps,
            modes,
            index,
            runs,
            max_freq,
        }
    }

    fn gather(&self, f: &SpectralField) -> Coefs {
        let nm = self.index.len();
        let mut out = Coefs::zeros(nm, self.comps);
        for c in 0..self.comps {
            let src = f.component(c);
            for (n, &idx) in self.index.iter().enumerate() {
                out.re[c * nm + n] = src[idx].re;
                out.im[c * nm + n] = src[idx].im;
            }
            out.means[c] = src[0].re;
        }
        out
    }

    /// Values at `x` given gathered coefficients.
    fn eval(&self, coefs: &Coefs, x: [f64; 3], out: &mut [f64], tables: &mut PhaseTables) {
        let dim = self.grid.dim();
        let k0 = self.grid.base_wavenumber();
        let kmax = self.max_freq;
        for a in 0..dim {
            let (tr, ti) = (&mut tables.re[a], &mut tables.im[a]);
            tr.clear();
            ti.clear();
            tr.resize(2 * kmax + 1, 1.0);
            ti.resize(2 * kmax + 1, 0.0);
            let (s1, c1) = (k0 * x[a]).sin_cos();
            let (mut cos, mut sin) = (1.0, 0.0);
            for m in 1..=kmax {
                (cos, sin) = (cos * c1 - sin * s1, cos * s1 + sin * c1);
                tr[kmax + m] = cos;
                ti[kmax + m] = sin;
                tr[kmax - m] = cos;
                ti[kmax - m] = -sin;
            }
        }
        let nm = self.modes.len();
        let offset = |m: i64| (kmax as i64 + m) as usize;
        out[..self.comps].copy_from_slice(&coefs.means);
        for &(start, end) in &self.runs {
            let m = self.modes[start];
            let t0 = offset(m[0]);
            let len = end - start;
            let (er, ei) = (&tables.re[0][t0..t0 + len], &tables.im[0][t0..t0 + len]);
            let (mut pr, mut pi) = (1.0, 0.0);
            for a in 1..dim {
                let (qr, qi) = (tables.re[a][offset(m[a])], tables.im[a][offset(m[a])]);
                (pr, pi) = (pr * qr - pi * qi, pr * qi + pi * qr);
            }
            for (c, o) in out.iter_mut().enumerate().take(self.comps) {
                let base = c * nm;
                let (sr, si) = complex_dot(
                    &coefs.re[base + start..base + end],
                    &coefs.im[base + start..base + end],
                    er,
                    ei,
                );
                *o += 2.0 * (sr * pr - si * pi);
            }
        }
    }
}

/// Trigonometric interpolant of a sampled field, exact for band-limited data.
#[derive(Debug, Clone)]
pub struct TrigInterpolant {
    sum: ModeSum,
    coefs: Coefs,
}

impl TrigInterpolant {
    pub fn new(f: &RealField) -> Result<Self> {
        if f.components() > 9 {
            return Err(Error::ShapeMismatch(
                "at most 9 components can be interpolated".into(),
            ));
        }
        let spec = forward(f);
        let sum = ModeSum::for_fields(&[&spec]);
        let coefs = sum.gather(&spec);
        Ok(Self { sum, coefs })
    }

    pub fn components(&self) -> usize {
        self.sum.comps
    }

    /// Values at each point, component-major (`out[c][point]`).
    pub fn eval_points(&self, points: &[[f64; 3]]) -> Vec<Vec<f64>> {
        let comps = self.sum.comps;
        let mut out = vec![vec![0.0; points.len()]; comps];
        let mut tables = PhaseTables::default();
        let mut buf = [0.0; 9];
        for (p, &x) in points.iter().enumerate() {
            self.sum.eval(&self.coefs, x, &mut buf, &mut tables);
            for c in 0..comps {
                out[c][p] = buf[c];
            }
        }
        out
    }

    /// Samples at every point as a field on the interpolant's grid.
    pub fn sample(&self, points: &[[f64; 3]]) -> Result<RealField> {
        let grid = self.sum.grid;
        if points.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points for a grid of {}",
                points.len(),
                grid.len()
            )));
        }
        let data = self.eval_points(points).concat();
        RealField::from_vec(grid, self.sum.comps, data)
    }
}

/// Determinant and adjugate of a `dim × dim` matrix (row-major in `m`).
fn det_adj(m: &[f64; 9], dim: usize) -> (f64, [f64; 9]) {
    let mut adj = [0.0; 9];
    match dim {
        1 => {
            adj[0] = 1.0;
            (m[0], adj)
        }
        2 => {
            let (a, b, c, d) = (m[0], m[1], m[2], m[3]);
            adj[0] = d;
            adj[1] = -b;
            adj[2] = -c;
            adj[3] = a;
            (a * d - b * c, adj)
        }
        _ => {
            let e = |i: usize, j: usize| m[i * 3 + j];
            // adj_{ij} = cofactor_{ji}
            for i in 0..3 {
                for j in 0..3 {
                    let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                    let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                    adj[i * 3 + j] = e(r0, c0) * e(r1, c1) - e(r0, c1) * e(r1, c0);
                }
            }
            let det = e(0, 0) * adj[0] + e(0, 1) * adj[3] + e(0, 2) * adj[6];
            (det, adj)
        }
    }
}

/// Sampled flow map `X(t, ·)` with its derived matrix fields.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub t: f64,
    /// `X(t, y) - y`, periodic.
    pub displacement: RealField,
    /// `DX`
    pub dx: RealField,
    /// `J = det DX`
    pub jacobian: RealField,
    /// `A = (DX)⁻¹`
    pub inverse: RealField,
    /// `adj(DX) = J A`
    pub adjugate: RealField,
}

impl FlowMap {
    pub fn identity(grid: Grid, t: f64) -> Self {
        Self::from_displacement(RealField::zeros(grid, grid.dim()), t)
            .expect("identity map never folds")
    }

    /// Derives `DX`, `J`, `A` and `adj(DX)` from a displacement; fails when
    /// `J <= 0` somewhere.
    pub fn from_displacement(displacement: RealField, t: f64) -> Result<Self> {
        let grid = *displacement.grid();
        let dim = grid.dim();
        if displacement.components() != dim {
            return Err(Error::ShapeMismatch(format!(
                "displacement needs {dim} components"
            )));
        }
        let mut dx = differentiate(&forward(&displacement), Derivative::Gradient)?.to_real();
        for i in 0..dim {
            dx.component_mut(i * dim + i)
                .iter_mut()
                .for_each(|v| *v += 1.0);
        }
        let len = grid.len();
        let mut jacobian = RealField::zeros(grid, 1);
        let mut inverse = RealField::zeros(grid, dim * dim);
        let mut adjugate = RealField::zeros(grid, dim * dim);
        let mut min_j = f64::INFINITY;
        for p in 0..len {
            let mut m = [0.0; 9];
            for c in 0..dim * dim {
                m[c] = dx.component(c)[p];
            }
            let (det, adj) = det_adj(&m, dim);
            min_j = min_j.min(det);
            jacobian.data_mut()[p] = det;
            for c in 0..dim * dim {
                adjugate.component_mut(c)[p] = adj[c];
                inverse.component_mut(c)[p] = adj[c] / det;
            }
        }
        if !(min_j > 0.0) {
            return Err(Error::Fold {
                min_jacobian: min_j,
            });
        }
        Ok(Self {
            t,
            displacement,
            dx,
            jacobian,
            inverse,
            adjugate,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.displacement.grid()
    }

    pub fn min_jacobian(&self) -> f64 {
        self.jacobian.min()
    }

    /// Particle positions `X(t, y)` for every lattice point `y`.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        let grid = *self.grid();
        let dim = grid.dim();
        (0..grid.len())
            .map(|p| {
                let mut x = grid.position(p);
                for (a, xa) in x.iter_mut().enumerate().take(dim) {
                    *xa += self.displacement.component(a)[p];
                }
                x
            })
            .collect()
    }
}

/// Velocity snapshots prepared for evaluation at arbitrary `(t, x)`.
struct VelocityHistory {
    times: Vec<f64>,
    sum: ModeSum,
    coefs: Vec<Coefs>,
}

impl VelocityHistory {
    fn new(traj: &Trajectory) -> Self {
        let specs: Vec<SpectralField> = traj.snapshots.iter().map(|s| forward(&s.u)).collect();
        let refs: Vec<&SpectralField> = specs.iter().collect();
        let sum = ModeSum::for_fields(&refs);
        let coefs = specs.iter().map(|s| sum.gather(s)).collect();
        Self {
            times: traj.times(),
            sum,
            coefs,
        }
    }

    /// Lagrange weights over (at most) four snapshots around `t`.
    fn stencil(&self, t: f64) -> (usize, Vec<f64>) {
        let n = self.times.len();
        let width = n.min(4);
        let i = match self.times.iter().position(|&ti| ti > t) {
            Some(0) => 0,
            Some(k) => k - 1,
            None => n - 1,
        };
        let start = i.saturating_sub(1).min(n - width);
        let nodes = &self.times[start..start + width];
        let weights = (0..width)
            .map(|j| {
                (0..width)
                    .filter(|&k| k != j)
                    .map(|k| (t - nodes[k]) / (nodes[j] - nodes[k]))
                    .product()
            })
            .collect();
        (start, weights)
    }

    fn coefficients_at(&self, t: f64) -> Coefs {
        let (start, w) = self.stencil(t);
        let mut coefs = Coefs::zeros(self.sum.modes.len(), self.sum.comps);
        for (j, wj) in w.iter().enumerate() {
            coefs.axpy(*wj, &self.coefs[start + j]);
        }
        coefs
    }

    /// `u(t, x_p)` for all particles, written as `out[p*dim + a]`.
    fn velocity(&self, t: f64, x: &[[f64; 3]], out: &mut [f64]) {
        let dim = self.sum.comps;
        let coefs = self.coefficients_at(t);
        let mut tables = PhaseTables::default();
        let mut buf = [0.0; 9];
        for (p, xp) in x.iter().enumerate() {
            self.sum.eval(&coefs, *xp, &mut buf, &mut tables);
            out[p * dim..(p + 1) * dim].copy_from_slice(&buf[..dim]);
        }
    }
}

fn rk4_step(hist: &VelocityHistory, t: f64, h: f64, x: &mut [[f64; 3]]) {
    let dim = hist.sum.comps;
    let n = x.len();
    let mut k = vec![vec![0.0; n * dim]; 4];
    let mut stage = x.to_vec();
    let offsets = [0.0, 0.5, 0.5, 1.0];
    for s in 0..4 {
        if s > 0 {
            for p in 0..n {
                for a in 0..dim {
                    stage[p][a] = x[p][a] + offsets[s] * h * k[s - 1][p * dim + a];
                }
            }
        }
        hist.velocity(t + offsets[s] * h, &stage, &mut k[s]);
    }
    for p in 0..n {
        for a in 0..dim {
            let i = p * dim + a;
            x[p][a] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
    }
}

/// Flow maps at several times (ascending) from one particle integration.
///
/// Particles move with classical RK4 at a quarter of the snapshot spacing;
/// the velocity is interpolated trigonometrically in space and by cubic
/// Lagrange polynomials in time.
pub fn compute_flow_maps(traj: &Trajectory, times: &[f64]) -> Result<Vec<FlowMap>> {
    let grid = *traj
        .grid()
        .ok_or(Error::InsufficientSnapshots { needed: 2, have: 0 })?;
    let (start, end) = (traj.start(), traj.end());
    for w in times.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidArgument(
                "flow map times must be ascending".into(),
            ));
        }
    }
    for &t in times {
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { t, start, end });
        }
    }
    let dim = grid.dim();
    let mut x: Vec<[f64; 3]> = (0..grid.len()).map(|p| grid.position(p)).collect();
    let y = x.clone();
    let snapshot_times = traj.times();
    let mut out = Vec::with_capacity(times.len());
    if times.iter().all(|&t| t == start) || traj.len() < 2 {
        for &t in times {
            out.push(FlowMap::identity(grid, t));
        }
        return Ok(out);
    }
    let hist = VelocityHistory::new(traj);
    let mut t_now = start;
    let mut pending = times.iter().copied().peekable();
    let record = |x: &[[f64; 3]], t: f64| -> Result<FlowMap> {
        let mut disp = RealField::zeros(grid, dim);
        for a in 0..dim {
            let comp = disp.component_mut(a);
            for p in 0..x.len() {
                comp[p] = x[p][a] - y[p][a];
            }
        }
        FlowMap::from_displacement(disp, t)
    };
    while let Some(&t) = pending.peek() {
        if t <= t_now {
            out.push(record(&x, t)?);
            pending.next();
            continue;
        }
        // integrate to the next snapshot time or the requested time
        let i = snapshot_times
            .iter()
            .position(|&s| s > t_now)
            .unwrap_or(snapshot_times.len() - 1);
        let interval = snapshot_times[i] - snapshot_times[i.saturating_sub(1)];
        let target = t.min(snapshot_times[i]);
        let span = target - t_now;
        let substeps = ((4.0 * span / interval) - 1e-9).ceil().max(1.0) as usize;
        let h = span / substeps as f64;
        for s in 0..substeps {
            rk4_step(&hist, t_now + s as f64 * h, h, &mut x);
        }
        t_now = target;
    }
    Ok(out)
}

/// Flow map at one time.
pub fn compute_flow_map(traj: &Trajectory, t: f64) -> Result<FlowMap> {
    Ok(compute_flow_maps(traj, &[t])?.remove(0))
}

/// `f ∘ X` by trigonometric interpolation at the particle positions.
pub fn pull_back(f: &RealField, fm: &FlowMap) -> Result<RealField> {
    fm.grid().check_same(f.grid())?;
    let interp = TrigInterpolant::new(f)?;
    interp.sample(&fm.positions())
}

/// `Y = X⁻¹` at every lattice point, returned as the periodic displacement
/// `Y(x) - x`. Newton iteration from `x - D(x)`, tolerance `1e-10`, at most
/// 50 iterations.
pub fn inverse_displacement(fm: &FlowMap) -> Result<RealField> {
    let grid = *fm.grid();
    let dim = grid.dim();
    let disp = TrigInterpolant::new(&fm.displacement)?;
    let grad = TrigInterpolant::new(
        &differentiate(&forward(&fm.displacement), Derivative::Gradient)?.to_real(),
    )?;
    let mut out = RealField::zeros(grid, dim);
    let mut tables = PhaseTables::default();
    let mut dbuf = [0.0; 9];
    let mut gbuf = [0.0; 9];
    for p in 0..grid.len() {
        let x = grid.position(p);
        let mut y = x;
        for a in 0..dim {
            y[a] -= fm.displacement.component(a)[p];
        }
        let mut converged = false;
        for _ in 0..50 {
            disp.sum.eval(&disp.coefs, y, &mut dbuf, &mut tables);
            let mut r = [0.0; 3];
            let mut norm: f64 = 0.0;
            for a in 0..dim {
                r[a] = y[a] + dbuf[a] - x[a];
                norm = norm.max(r[a].abs());
            }
            if norm <= 1e-10 {
                converged = true;
                break;
            }
            grad.sum.eval(&grad.coefs, y, &mut gbuf, &mut tables);
            let mut m = [0.0; 9];
            for i in 0..dim {
                for j in 0..dim {
                    m[i * dim + j] = gbuf[i * dim + j] + if i == j { 1.0 } else { 0.0 };
                }
            }
            let (det, adj) = det_adj(&m, dim);
            if !(det > 0.0) {
                return Err(Error::Fold { min_jacobian: det });
            }
            for i in 0..dim {
                let step: f64 = (0..dim).map(|j| adj[i * dim + j] * r[j]).sum::<f64>() / det;
                y[i] -= step;
            }
        }
        if !converged {
            return Err(Error::NonConvergence { streak: 50 });
        }
        for a in 0..dim {
            out.component_mut(a)[p] = y[a] - x[a];
        }
    }
    Ok(out)
}

/// `f̃ ∘ X⁻¹`: Eulerian values of a Lagrangian field.
pub fn push_forward(f: &RealField, fm: &FlowMap) -> Result<RealField> {
    let inv = inverse_displacement(fm)?;
    push_forward_with(f, &inv)
}

/// [`push_forward`] with a precomputed inverse displacement.
pub fn push_forward_with(f: &RealField, inverse_disp: &RealField) -> Result<RealField> {
    let grid = *f.grid();
    grid.check_same(inverse_disp.grid())?;
    let dim = grid.dim();
    let points: Vec<[f64; 3]> = (0..grid.len())
        .map(|p| {
            let mut x = grid.position(p);
            for (a, xa) in x.iter_mut().enumerate().take(dim) {
                *xa += inverse_disp.component(a)[p];
            }
            x
        })
        .collect();
    TrigInterpolant::new(f)?.sample(&points)
}

/// `(ρ̃, ũ, B̃)`.
#[derive(Debug, Clone)]
pub struct LagrangianState {
    pub rho: RealField,
    pub u: RealField,
    pub b: RealField,
}

pub fn lagrangian_state(s: &State, fm: &FlowMap) -> Result<LagrangianState> {
    Ok(LagrangianState {
        rho: pull_back(&s.rho, fm)?,
        u: pull_back(&s.u, fm)?,
        b: pull_back(&s.b, fm)?,
    })
}

/// `(div M)_k = Σ_j ∂_j M_{jk}` for a matrix field, spectrally, without truncation.
pub fn matrix_divergence(m: &RealField) -> Result<RealField> {
    let grid = *m.grid();
    let dim = grid.dim();
    if m.components() != dim * dim {
        return Err(Error::ShapeMismatch(format!(
            "matrix field needs {} components",
            dim * dim
        )));
    }
    let spec = forward(m);
    let mut out = SpectralField::zeros(grid, dim);
    for k in 0..dim {
        for j in 0..dim {
            let d = differentiate(&spec.extract(j * dim + k), Derivative::Partial(j))?;
            let dst = out.component_mut(k);
            for (o, v) in dst.iter_mut().zip(d.component(0)) {
                *o += v;
            }
        }
    }
    Ok(out.to_real())
}

/// Pointwise `A·M` of two matrix fields.
pub fn matmul(a: &RealField, m: &RealField) -> RealField {
    let grid = *a.grid();
    let dim = grid.dim();
    let mut out = RealField::zeros(grid, dim * dim);
    for i in 0..dim {
        for k in 0..dim {
            let mut acc = vec![0.0; grid.len()];
            for j in 0..dim {
                for ((o, x), y) in acc
                    .iter_mut()
                    .zip(a.component(i * dim + j))
                    .zip(m.component(j * dim + k))
                {
                    *o += x * y;
                }
            }
            out.component_mut(i * dim + k).copy_from_slice(&acc);
        }
    }
    out
}

/// Pointwise `A·v` of a matrix and a vector field.
pub fn matvec(a: &RealField, v: &RealField) -> RealField {
    let grid = *a.grid();
    let dim = grid.dim();
    let mut out = RealField::zeros(grid, dim);
    for i in 0..dim {
        let dst = out.component_mut(i);
        for j in 0..dim {
            for ((o, x), y) in dst
                .iter_mut()
                .zip(a.component(i * dim + j))
                .zip(v.component(j))
            {
                *o += x * y;
            }
        }
    }
    out
}

/// `(v ⊗ w)_{jk} = v_j w_k`.
pub fn outer(v: &RealField, w: &RealField) -> RealField {
    let grid = *v.grid();
    let dim = grid.dim();
    let mut out = RealField::zeros(grid, dim * dim);
    for j in 0..dim {
        for k in 0..dim {
            let prod: Vec<f64> = v
                .component(j)
                .iter()
                .zip(w.component(k))
                .map(|(a, b)| a * b)
                .collect();
            out.component_mut(j * dim + k).copy_from_slice(&prod);
        }
    }
    out
}

/// Scalar times identity matrix field.
pub fn scalar_identity(s: &RealField, dim: usize) -> RealField {
    let grid = *s.grid();
    let mut out = RealField::zeros(grid, dim * dim);
    for i in 0..dim {
        out.component_mut(i * dim + i).copy_from_slice(s.data());
    }
    out
}

/// `max_k ‖(div_y adj DX)_k‖₂`.
pub fn piola_residual(fm: &FlowMap) -> f64 {
    let div = matrix_divergence(&fm.adjugate).expect("adjugate is a matrix field");
    (0..div.components())
        .map(|k| l2_norm(&div.extract(k)))
        .fold(0.0, f64::max)
}

/// Largest pointwise deviation in `DX·A = Id` and `adj = J·A`.
pub fn algebra_residual(fm: &FlowMap) -> f64 {
    let dim = fm.grid().dim();
    let prod = matmul(&fm.dx, &fm.inverse);
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let target = if i == j { 1.0 } else { 0.0 };
            for v in prod.component(i * dim + j) {
                worst = worst.max((v - target).abs());
            }
        }
    }
    let scaled = fm.inverse.pointwise_mul(&fm.jacobian).expect("same grid");
    for (a, b) in scaled.data().iter().zip(fm.adjugate.data()) {
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    worst
}

/// Residuals of the five change-of-variables identities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformResiduals {
    pub names: [&'static str; 5],
    /// `‖Eulerian∘X - Lagrangian‖₂`
    pub absolute: [f64; 5],
    /// Absolute residual over `‖Eulerian∘X‖₂`; equal to the absolute
    /// residual when the Eulerian side vanishes identically.
    pub relative: [f64; 5],
}

impl TransformResiduals {
    pub fn max_relative(&self) -> f64 {
        self.relative.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares each Eulerian expression, pulled back along `X`, with its
/// Lagrangian form:
///
/// 1. `∇|B|²` vs `J⁻¹ div(adj |B̃|²)`
/// 2. `B·∇B` vs `J⁻¹ div(adj B̃⊗B̃)`
/// 3. `(div u)B` vs `J⁻¹ div(adj ũ) B̃`
/// 4. `(div u)B + u·∇B` vs `J⁻¹ div(adj ũ⊗B̃)`
/// 5. `B·∇u` vs `J⁻¹ div(adj B̃⊗ũ)`
pub fn transform_residuals(s: &State, fm: &FlowMap) -> Result<TransformResiduals> {
    let grid = *s.grid();
    grid.check_same(fm.grid())?;
    let dim = grid.dim();
    let us = forward(&s.u);
    let bs = forward(&s.b);
    let grad_u = differentiate(&us, Derivative::Gradient)?.to_real();
    let grad_b = differentiate(&bs, Derivative::Gradient)?.to_real();
    let div_u = differentiate(&us, Derivative::Divergence)?.to_real();
    let b2 = s.b.magnitude().map(|m| m * m);
    let grad_b2 = differentiate(&forward(&b2), Derivative::Gradient)?.to_real();
    let b_grad_b = dot_grad(&s.b, &grad_b);
    let divu_b = s.b.pointwise_mul(&div_u)?;
    let mut transport = divu_b.clone();
    transport += &dot_grad(&s.u, &grad_b);
    let b_grad_u = dot_grad(&s.b, &grad_u);
    let eulerian = [grad_b2, b_grad_b, divu_b, transport, b_grad_u];

    let lag = lagrangian_state(s, fm)?;
    let inv_j = fm.jacobian.map(|j| 1.0 / j);
    let b2t = lag.b.magnitude().map(|m| m * m);
    let piola = |m: &RealField| -> Result<RealField> {
        matrix_divergence(&matmul(&fm.adjugate, m))?.pointwise_mul(&inv_j)
    };
    let div_adj_u = differentiate(
        &forward(&matvec(&fm.adjugate, &lag.u)),
        Derivative::Divergence,
    )?
    .to_real();
    let lagrangian = [
        piola(&scalar_identity(&b2t, dim))?,
        piola(&outer(&lag.b, &lag.b))?,
        lag.b.pointwise_mul(&div_adj_u.pointwise_mul(&inv_j)?)?,
        piola(&outer(&lag.u, &lag.b))?,
        piola(&outer(&lag.b, &lag.u))?,
    ];
    let mut absolute = [0.0; 5];
    let mut relative = [0.0; 5];
    for i in 0..5 {
        let pulled = pull_back(&eulerian[i], fm)?;
        let abs = l2_norm(&(&pulled - &lagrangian[i]));
        let scale = l2_norm(&pulled);
        absolute[i] = abs;
        relative[i] = if scale == 0.0 { abs } else { abs / scale };
    }
    Ok(TransformResiduals {
        names: ["grad_b2", "b_grad_b", "divu_b", "div_u_b", "b_grad_u"],
        absolute,
        relative,
    })
}

/// `‖∂_t(J ρ̃)‖₂` at snapshot time `t` by a centered difference over the
/// neighbouring snapshots.
pub fn mass_residual(traj: &Trajectory, t: f64) -> Result<f64> {
    let times = traj.times();
    let i = times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
        .ok_or(Error::InvalidArgument(format!(
            "{t} is not a snapshot time"
        )))?;
    if traj.len() < 3 || i == 0 || i + 1 >= traj.len() {
        return Err(Error::InsufficientSnapshots {
            needed: 3,
            have: traj.len(),
        });
    }
    let maps = compute_flow_maps(traj, &[times[i - 1], times[i + 1]])?;
    let m0 = pull_back(&traj.snapshots[i - 1].rho, &maps[0])?.pointwise_mul(&maps[0].jacobian)?;
    let m1 = pull_back(&traj.snapshots[i + 1].rho, &maps[1])?.pointwise_mul(&maps[1].jacobian)?;
    Ok(l2_norm(&(&m1 - &m0)) / (times[i + 1] - times[i - 1]))
}

/// Density from the Lagrangian mass law: `ρ̃ = ρ₀/J` and its Eulerian
/// push-forward `ρ = ρ̃∘X⁻¹`.
pub fn recover_density(rho0: &RealField, fm: &FlowMap) -> Result<(RealField, RealField)> {
    fm.grid().check_same(rho0.grid())?;
    let min_j = fm.min_jacobian();
    if !(min_j > 0.0) {
        return Err(Error::Fold {
            min_jacobian: min_j,
        });
    }
    let lagr = rho0.pointwise_mul(&fm.jacobian.map(|j| 1.0 / j))?;
    let euler = push_forward(&lagr, fm)?;
    Ok((lagr, euler))
}
