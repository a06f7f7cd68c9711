//! Run configuration: one TOML file with flat sections, overridable from the
//! command line.
//!
//! ```toml
//! [run]
//! seed = 7
//!
//! [grid]
//! dim = 2
//! points_per_axis = 32
//!
//! [params]
//! mu = 0.1
//! lambda = 0.05
//! nu = 0.08
//! pressure_a = 1.0
//! pressure_gamma = 1.4
//! rho_bar = 1.0
//! c0_floor = 0.5
//!
//! [initial]
//! kind = "random_small"
//! rho_amplitude = 0.05
//! u_amplitude = 0.1
//! b_amplitude = 0.1
//! band = 3
//!
//! [time]
//! dt = 0.01
//! t_end = 0.5
//! snapshot_every = 1
//! checkpoint_every = 10
//!
//! [output]
//! dir = "runs/small"
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use mhd_core::initial::{FieldKind, InitialCondition};
use mhd_core::littlewood_paley::BesovSpec;
use mhd_core::local_solver::PicardConfig;
use mhd_core::mhd::{PhysParams, State, DEFAULT_CFL_FACTOR};
use mhd_core::spectral::Grid;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{CliError, CliResult};

/// Environment variable naming the directory that relative output paths are
/// resolved against.
pub const OUTPUT_ROOT_ENV: &str = "MHD_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub grid: GridSpec,
    #[serde(default)]
    pub params: PhysParams,
    #[serde(default)]
    pub initial: InitialSpec,
    pub time: TimeSpec,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default)]
    pub output: OutputSpec,
    /// Directory of the config file; relative checkpoint paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub points_per_axis: usize,
    #[serde(default = "default_period")]
    pub period: f64,
}

fn default_period() -> f64 {
    2.0 * PI
}

impl GridSpec {
    pub fn build(&self) -> CliResult<Grid> {
        Grid::new(self.dim, self.points_per_axis, self.period)
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Initial data: a named analytic family or a checkpoint file. The random
/// family takes its seed from `[run]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    #[default]
    Equilibrium,
    SingleMode {
        field: FieldKind,
        mode: Vec<i64>,
        #[serde(default)]
        component: usize,
        amplitude: f64,
    },
    ForceFreeMode {
        amplitude: f64,
    },
    RandomSmall {
        rho_amplitude: f64,
        u_amplitude: f64,
        b_amplitude: f64,
        band: usize,
    },
    Checkpoint {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub dt: f64,
    pub t_end: f64,
    /// Steps between rows of the time series (and stored snapshots).
    #[serde(default = "one")]
    pub snapshot_every: usize,
    /// Steps between checkpoints; 0 writes only the first and last state.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_cfl")]
    pub cfl_factor: f64,
}

fn one() -> usize {
    1
}

fn default_cfl() -> f64 {
    DEFAULT_CFL_FACTOR
}

impl TimeSpec {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovEntry {
    pub s: f64,
    pub p: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Diagnostics {
    /// Hoff functionals and the energy report in the summary.
    pub hoff: bool,
    /// Flow-map and transform-identity residuals at the final time.
    pub lagrangian: bool,
    /// Picard iteration from the initial data.
    pub picard: bool,
    /// Besov norms of `ρ - ρ̄`, `u` and `B` at the final time.
    pub besov: Vec<BesovEntry>,
    /// Exponent `q >= 6` of the blow-up indicator.
    pub blowup_q: f64,
    /// Smallness threshold `ε₀` reported with the Hoff functionals.
    pub eps0: f64,
    /// Bound on `‖div B‖₂` flagged in the summary.
    pub div_tol: f64,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            hoff: true,
            lagrangian: false,
            picard: false,
            besov: Vec::new(),
            blowup_q: 6.0,
            eps0: 1e-2,
            div_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("run"),
        }
    }
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
    pub points_per_axis: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.dt {
            self.time.dt = v;
        }
        if let Some(v) = o.t_end {
            self.time.t_end = v;
        }
        if let Some(v) = o.seed {
            self.run.seed = v;
        }
        if let Some(v) = o.points_per_axis {
            self.grid.points_per_axis = v;
        }
        if let Some(v) = &o.output_dir {
            self.output.dir = v.clone();
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let grid = self.grid.build()?;
        self.params
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let t = &self.time;
        if !(t.dt.is_finite() && t.dt > 0.0) {
            return Err(CliError::Config(format!(
                "time.dt must be positive, got {}",
                t.dt
            )));
        }
        if !(t.t_end.is_finite() && t.t_end >= 0.0) {
            return Err(CliError::Config(format!(
                "time.t_end must be >= 0, got {}",
                t.t_end
            )));
        }
        if (t.steps() as f64 * t.dt - t.t_end).abs() > 1e-9 * t.t_end.max(1.0) {
            return Err(CliError::Config(format!(
                "t_end {} is not a multiple of dt {}",
                t.t_end, t.dt
            )));
        }
        if t.snapshot_every == 0 {
            return Err(CliError::Config("time.snapshot_every must be >= 1".into()));
        }
        if !(t.cfl_factor > 0.0) {
            return Err(CliError::Config("time.cfl_factor must be positive".into()));
        }
        if !(self.diagnostics.blowup_q >= 6.0) {
            return Err(CliError::Config("diagnostics.blowup_q must be >= 6".into()));
        }
        for b in &self.diagnostics.besov {
            BesovSpec::new(b.s, b.p, b.r).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.diagnostics.picard {
            self.picard
                .validate(grid.dim())
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let InitialSpec::Checkpoint { path } = &self.initial {
            let full = self.resolve(path);
            if !full.is_file() {
                return Err(CliError::Config(format!(
                    "checkpoint {} does not exist",
                    full.display()
                )));
            }
        }
        Ok(())
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Output directory, relative paths taken from `$MHD_OUTPUT_ROOT` (or the
    /// working directory).
    pub fn run_dir(&self) -> PathBuf {
        if self.output.dir.is_absolute() {
            return self.output.dir.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        root.join(&self.output.dir)
    }

    pub fn initial_condition(&self) -> Option<InitialCondition> {
        Some(match &self.initial {
            InitialSpec::Equilibrium => InitialCondition::Equilibrium,
            InitialSpec::SingleMode {
                field,
                mode,
                component,
                amplitude,
            } => {
                let mut m = [0i64; 3];
                for (dst, src) in m.iter_mut().zip(mode) {
                    *dst = *src;
                }
                InitialCondition::SingleMode {
                    field: *field,
                    mode: m,
                    component: *component,
                    amplitude: *amplitude,
                }
            }
            InitialSpec::ForceFreeMode { amplitude } => InitialCondition::ForceFreeMode {
                amplitude: *amplitude,
            },
            InitialSpec::RandomSmall {
                rho_amplitude,
                u_amplitude,
                b_amplitude,
                band,
            } => InitialCondition::RandomSmall {
                rho_amplitude: *rho_amplitude,
                u_amplitude: *u_amplitude,
                b_amplitude: *b_amplitude,
                band: *band,
                seed: self.run.seed,
            },
            InitialSpec::Checkpoint { .. } => return None,
        })
    }

    /// Builds the initial state on the configured grid.
    pub fn initial_state(&self) -> CliResult<State> {
        let grid = self.grid.build()?;
        if let InitialSpec::SingleMode { mode, .. } = &self.initial {
            if mode.len() > 3 {
                return Err(CliError::Config(format!(
                    "mode {mode:?} has more than 3 entries"
                )));
            }
        }
        match (&self.initial, self.initial_condition()) {
            (_, Some(ic)) => ic
                .build(grid, &self.params)
                .map_err(|e| CliError::Config(e.to_string())),
            (InitialSpec::Checkpoint { path }, None) => {
                let ck = checkpoint::read(&self.resolve(path))?;
                if *ck.state.grid() != grid {
                    return Err(CliError::Config(format!(
                        "checkpoint grid {:?} differs from the configured grid {grid:?}",
                        ck.state.grid()
                    )));
                }
                Ok(ck.state)
            }
            (_, None) => unreachable!("only checkpoints lack an analytic initial condition"),
        }
    }
}
