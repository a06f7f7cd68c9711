use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mhd_core::energy::{blowup_indicator, dissipation, energy_report, total_energy};
use mhd_core::lagrangian::{
    algebra_residual, compute_flow_map, mass_residual, piola_residual, transform_residuals,
};
use mhd_core::littlewood_paley::{besov_norm, BesovSpec, DyadicFamily};
use mhd_core::local_solver::{fixed_point_residuals, picard_run};
use mhd_core::mhd::{div_b_norm, State, Stepper, Trajectory};
use serde_json::{json, Value};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::rundir::{
    write_file, Manifest, RunDirLock, CHECKPOINT_DIR, CONFIG_FILE, MANIFEST_FILE, SERIES_FILE,
    SUMMARY_FILE,
};

pub const SERIES_HEADER: &str = "step,t,energy,dissipation,div_b_l2,min_rho,blowup_indicator";

/// Result of a simulation whose run directory could be set up. A failure
/// during time stepping is reported here rather than as an `Err`, because the
/// partial artifacts are still written.
#[derive(Debug)]
pub struct SimulationOutcome {
    pub run_dir: PathBuf,
    pub steps_completed: usize,
    pub summary: Value,
    pub failure: Option<CliError>,
}

/// Seventeen significant digits, enough to reproduce every `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

struct SeriesWriter {
    out: BufWriter<File>,
    path: PathBuf,
    q: f64,
}

impl SeriesWriter {
    fn create(path: PathBuf, q: f64) -> CliResult<Self> {
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path,
            q,
        };
        writeln!(w.out, "{SERIES_HEADER}").map_err(|e| CliError::io(&w.path, e))?;
        Ok(w)
    }

    fn row(&mut self, step: usize, s: &State, cfg: &RunConfig) -> CliResult<()> {
        let cols = [
            s.t,
            total_energy(s, &cfg.params),
            dissipation(s, &cfg.params),
            div_b_norm(s),
            s.rho.min(),
            blowup_indicator(s, self.q)?,
        ];
        let line: Vec<String> = cols.iter().map(|v| fmt_float(*v)).collect();
        writeln!(self.out, "{step},{}", line.join(",")).map_err(|e| CliError::io(&self.path, e))
    }

    fn finish(mut self) -> CliResult<()> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

fn checkpoint_name(step: usize) -> String {
    format!("{CHECKPOINT_DIR}/step_{step:08}.ckpt")
}

fn clear_previous(dir: &Path) -> CliResult<()> {
    let ckpt = dir.join(CHECKPOINT_DIR);
    if ckpt.exists() {
        std::fs::remove_dir_all(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
    }
    for name in [SERIES_FILE, SUMMARY_FILE, MANIFEST_FILE] {
        let p = dir.join(name);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
        }
    }
    std::fs::create_dir_all(&ckpt).map_err(|e| CliError::io(&ckpt, e))
}

/// Drives the solver over `[0, t_end]` and writes the run directory.
pub fn run_simulate(cfg: &RunConfig) -> CliResult<SimulationOutcome> {
    cfg.validate()?;
    let initial = cfg.initial_state()?;
    let stepper = Stepper::new(cfg.params)?.with_cfl_factor(cfg.time.cfl_factor);
    let dir = cfg.run_dir();
    let _lock = RunDirLock::acquire(&dir)?;
    clear_previous(&dir)?;
    write_file(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;

    let mut artifacts = vec![CONFIG_FILE.to_string(), SERIES_FILE.to_string()];
    let mut series = SeriesWriter::create(dir.join(SERIES_FILE), cfg.diagnostics.blowup_q)?;
    let mut traj = Trajectory::new(cfg.params);
    let steps = cfg.time.steps();
    let every = cfg.time.snapshot_every;
    let ckpt_every = cfg.time.checkpoint_every;

    let save_checkpoint = |step: usize, s: &State, artifacts: &mut Vec<String>| -> CliResult<()> {
        let name = checkpoint_name(step);
        checkpoint::write(&dir.join(&name), s, &cfg.params)?;
        artifacts.push(name);
        Ok(())
    };

    series.row(0, &initial, cfg)?;
    traj.push(initial.clone())?;
    save_checkpoint(0, &initial, &mut artifacts)?;

    let mut state = initial.clone();
    let mut failure = None;
    let mut completed = 0;
    for n in 1..=steps {
        match stepper.step(&state, cfg.time.dt) {
            Ok(mut next) => {
                next.t = initial.t + n as f64 * cfg.time.dt;
                state = next;
                completed = n;
            }
            Err(e) => {
                failure = Some(CliError::Core(e));
                break;
            }
        }
        if n % every == 0 || n == steps {
            series.row(n, &state, cfg)?;
            traj.push(state.clone())?;
        }
        if (ckpt_every > 0 && n % ckpt_every == 0) || n == steps {
            save_checkpoint(n, &state, &mut artifacts)?;
        }
    }
    if failure.is_some() && completed > 0 && !artifacts.contains(&checkpoint_name(completed)) {
        save_checkpoint(completed, &state, &mut artifacts)?;
    }
    series.finish()?;

    let summary = summarize(cfg, &traj, steps, completed, failure.as_ref());
    write_file(
        &dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary)
            .expect("summary serializes")
            .as_bytes(),
    )?;
    artifacts.push(SUMMARY_FILE.to_string());
    let code = failure.as_ref().map(CliError::code);
    let manifest = Manifest::build(&dir, &artifacts, code, failure.is_some())?;
    write_file(&dir.join(MANIFEST_FILE), manifest.render().as_bytes())?;

    Ok(SimulationOutcome {
        run_dir: dir.clone(),
        steps_completed: completed,
        summary,
        failure,
    })
}

fn error_json(e: &dyn std::fmt::Display, code: &str) -> Value {
    json!({ "code": code, "message": e.to_string() })
}

fn summarize(
    cfg: &RunConfig,
    traj: &Trajectory,
    steps: usize,
    completed: usize,
    failure: Option<&CliError>,
) -> Value {
    let max_div_b = traj.snapshots.iter().map(div_b_norm).fold(0.0, f64::max);
    let min_rho = traj
        .snapshots
        .iter()
        .map(|s| s.rho.min())
        .fold(f64::INFINITY, f64::min);
    let mut summary = json!({
        "status": if failure.is_some() { "error" } else { "ok" },
        "error": failure.map(|e| error_json(e, e.code())),
        "steps_requested": steps,
        "steps_completed": completed,
        "t_final": traj.end(),
        "seed": cfg.run.seed,
        "grid": cfg.grid,
        "params": cfg.params,
        "flags": {
            "max_div_b_l2": max_div_b,
            "div_b_ok": max_div_b <= cfg.diagnostics.div_tol,
            "min_rho": min_rho,
            "density_ok": min_rho >= cfg.params.density_limit(),
        },
    });
    let obj = summary.as_object_mut().expect("summary is an object");
    if cfg.diagnostics.hoff {
        obj.insert("energy".into(), energy_section(cfg, traj));
    }
    if !cfg.diagnostics.besov.is_empty() {
        obj.insert("besov".into(), besov_section(cfg, traj));
    }
    if cfg.diagnostics.lagrangian {
        obj.insert("lagrangian".into(), lagrangian_section(traj));
    }
    if cfg.diagnostics.picard {
        obj.insert("picard".into(), picard_section(cfg, traj));
    }
    summary
}

fn energy_section(cfg: &RunConfig, traj: &Trajectory) -> Value {
    match energy_report(
        traj,
        &cfg.params,
        cfg.diagnostics.blowup_q,
        cfg.diagnostics.eps0,
    ) {
        Ok(rep) => json!({
            "c0": rep.c0,
            "a1": rep.hoff.a1,
            "a2": rep.hoff.a2,
            "e": rep.hoff.e,
            "e_sup": rep.hoff.e_sup,
            "h": rep.hoff.h,
            "balance_residual": rep.balance.balance_residual,
            "accumulated_residual": rep.balance.accumulated_residual,
            "lemma_ratio": rep.balance.lemma_ratio,
            "smallness_flag": rep.smallness_flag,
        }),
        Err(e) => json!({ "error": error_json(&e, e.code()) }),
    }
}

fn besov_section(cfg: &RunConfig, traj: &Trajectory) -> Value {
    let last = traj.last().expect("trajectory holds the initial state");
    let fam = match DyadicFamily::new(*last.grid()) {
        Ok(f) => f,
        Err(e) => return json!({ "error": error_json(&e, e.code()) }),
    };
    let a = last.rho.map(|r| r - cfg.params.rho_bar);
    let entries: Vec<Value> = cfg
        .diagnostics
        .besov
        .iter()
        .map(|b| {
            let spec = BesovSpec::new(b.s, b.p, b.r).expect("validated with the config");
            let norm = |f| besov_norm(&fam, f, &spec).unwrap_or(f64::NAN);
            json!({ "s": b.s, "p": b.p, "r": b.r, "a": norm(&a), "u": norm(&last.u), "b": norm(&last.b) })
        })
        .collect();
    Value::Array(entries)
}

fn lagrangian_section(traj: &Trajectory) -> Value {
    let run = || -> mhd_core::Result<Value> {
        let t = traj.end();
        let fm = compute_flow_map(traj, t)?;
        let last = traj.last().expect("trajectory holds the initial state");
        let tr = transform_residuals(last, &fm)?;
        let mass = if traj.len() >= 3 {
            Some(mass_residual(traj, traj.snapshots[traj.len() / 2].t)?)
        } else {
            None
        };
        Ok(json!({
            "t": t,
            "min_jacobian": fm.min_jacobian(),
            "piola_residual": piola_residual(&fm),
            "algebra_residual": algebra_residual(&fm),
            "transform_names": tr.names,
            "transform_relative": tr.relative,
            "transform_absolute": tr.absolute,
            "mass_residual": mass,
        }))
    };
    run().unwrap_or_else(|e| json!({ "error": error_json(&e, e.code()) }))
}

fn picard_section(cfg: &RunConfig, traj: &Trajectory) -> Value {
    let s0 = &traj.snapshots[0];
    let run = || -> mhd_core::Result<Value> {
        let out = picard_run(&s0.rho, &s0.u, &s0.b, &cfg.params, &cfg.picard)?;
        let res = fixed_point_residuals(&out.solution, &s0.rho, &cfg.params)?;
        Ok(json!({ "report": out.report, "residuals": res }))
    };
    run().unwrap_or_else(|e| json!({ "error": error_json(&e, e.code()) }))
}
