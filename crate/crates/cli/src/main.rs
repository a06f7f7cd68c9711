use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mhd_cli::error::{EXIT_FAILURE, EXIT_OK};
use mhd_cli::report::run_report;
use mhd_cli::rundir::{write_file, RunDirLock};
use mhd_cli::simulate::run_simulate;
use mhd_cli::verify::{run_suite, Suite};
use mhd_cli::{CliError, CliResult, Overrides, RunConfig};
use serde_json::json;

/// Spectral compressible MHD simulator and verification harness.
#[derive(Debug, Parser)]
#[command(name = "mhd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the solver and write the time series, checkpoints and summary.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run one property suite and write its JSON report.
    Verify {
        config: PathBuf,
        #[arg(long, value_enum)]
        suite: Suite,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Summarize a finished run directory and re-check its artifacts.
    Report { rundir: PathBuf },
}

#[derive(Debug, Args)]
struct OverrideArgs {
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    points_per_axis: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            dt: a.dt,
            t_end: a.t_end,
            seed: a.seed,
            points_per_axis: a.points_per_axis,
            output_dir: a.output_dir,
        }
    }
}

fn load(path: &Path, overrides: OverrideArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&overrides.into());
    Ok(cfg)
}

fn simulate(config: PathBuf, overrides: OverrideArgs) -> CliResult<u8> {
    let cfg = load(&config, overrides)?;
    let out = run_simulate(&cfg)?;
    match out.failure {
        None => {
            println!(
                "{}",
                out.run_dir.join(mhd_cli::rundir::SUMMARY_FILE).display()
            );
            Ok(EXIT_OK)
        }
        Some(e) => {
            eprintln!(
                "error [{}]: {e} (after {} steps; partial artifacts in {})",
                e.code(),
                out.steps_completed,
                out.run_dir.display()
            );
            Ok(EXIT_FAILURE)
        }
    }
}

fn verify(config: PathBuf, suite: Suite, overrides: OverrideArgs) -> CliResult<u8> {
    let cfg = load(&config, overrides)?;
    cfg.validate()?;
    let dir = cfg.run_dir();
    let _lock = RunDirLock::acquire(&dir)?;
    let report = run_suite(&cfg, suite)?;
    let text = serde_json::to_string_pretty(&report).expect("suite report serializes");
    write_file(
        &dir.join(format!("verify_{}.json", suite.name())),
        text.as_bytes(),
    )?;
    println!("{text}");
    if report.passed {
        Ok(EXIT_OK)
    } else {
        let e = CliError::ChecksFailed {
            failed: report.failed(),
            total: report.checks.len(),
        };
        eprintln!("error [{}]: {e}", e.code());
        Ok(EXIT_FAILURE)
    }
}

fn report(rundir: PathBuf) -> CliResult<u8> {
    let rep = run_report(&rundir)?;
    print!("{}", rep.render());
    Ok(if rep.healthy() { EXIT_OK } else { EXIT_FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, overrides } => simulate(config, overrides),
        Command::Verify {
            config,
            suite,
            overrides,
        } => verify(config, suite, overrides),
        Command::Report { rundir } => report(rundir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            println!(
                "{}",
                json!({ "status": "error", "error": { "code": e.code(), "message": e.to_string() } })
            );
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}
