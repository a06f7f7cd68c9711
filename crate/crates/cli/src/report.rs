use std::path::Path;

use serde_json::Value;

use crate::checkpoint;
use crate::error::{CliError, CliResult};
use crate::rundir::{
    sha256_file, Manifest, CHECKPOINT_DIR, MANIFEST_FILE, SERIES_FILE, SUMMARY_FILE,
};
use crate::simulate::SERIES_HEADER;

/// What `mhd report` found in a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub summary: Value,
    pub manifest: Manifest,
    pub rows: usize,
    pub checkpoints: usize,
    /// Artifacts whose hash no longer matches the manifest.
    pub modified: Vec<String>,
    /// Checkpoints that fail to decode, with the error code.
    pub bad_checkpoints: Vec<(String, &'static str)>,
}

impl RunReport {
    pub fn healthy(&self) -> bool {
        self.manifest.status == "ok" && self.modified.is_empty() && self.bad_checkpoints.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let get = |k: &str| self.summary.get(k).cloned().unwrap_or(Value::Null);
        out.push_str(&format!("status            {}\n", self.manifest.status));
        if let Some(code) = &self.manifest.error_code {
            out.push_str(&format!("error             {code}\n"));
        }
        out.push_str(&format!("truncated         {}\n", self.manifest.truncated));
        out.push_str(&format!(
            "steps             {} / {}\n",
            get("steps_completed"),
            get("steps_requested")
        ));
        out.push_str(&format!("t_final           {}\n", get("t_final")));
        out.push_str(&format!("series rows       {}\n", self.rows));
        out.push_str(&format!("checkpoints       {}\n", self.checkpoints));
        if let Some(flags) = self.summary.get("flags") {
            out.push_str(&format!("flags             {flags}\n"));
        }
        if let Some(energy) = self.summary.get("energy") {
            for key in ["c0", "a1", "a2", "e", "h", "balance_residual"] {
                if let Some(v) = energy.get(key) {
                    out.push_str(&format!("{key:<18}{v}\n"));
                }
            }
        }
        for m in &self.modified {
            out.push_str(&format!("MODIFIED          {m}\n"));
        }
        for (name, code) in &self.bad_checkpoints {
            out.push_str(&format!("BAD CHECKPOINT    {name} ({code})\n"));
        }
        out
    }
}

/// Reads a run directory and re-validates its artifacts.
pub fn run_report(dir: &Path) -> CliResult<RunReport> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!(
            "{} is not a run directory",
            dir.display()
        )));
    }
    let read = |name: &str| {
        std::fs::read_to_string(dir.join(name)).map_err(|e| CliError::io(dir.join(name), e))
    };
    let manifest = Manifest::parse(&read(MANIFEST_FILE)?)?;
    let summary: Value = serde_json::from_str(&read(SUMMARY_FILE)?)
        .map_err(|e| CliError::RunDir(format!("{SUMMARY_FILE}: {e}")))?;
    let series = read(SERIES_FILE)?;
    if series.lines().next() != Some(SERIES_HEADER) {
        return Err(CliError::RunDir(format!(
            "{SERIES_FILE} has an unexpected header"
        )));
    }
    let rows = series.lines().count() - 1;

    let mut modified = Vec::new();
    for e in &manifest.entries {
        let path = dir.join(&e.path);
        if !path.is_file() || sha256_file(&path)? != e.sha256 {
            modified.push(e.path.clone());
        }
    }
    let mut bad_checkpoints = Vec::new();
    let mut checkpoints = 0;
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    if ckpt_dir.is_dir() {
        let mut names: Vec<_> = std::fs::read_dir(&ckpt_dir)
            .map_err(|e| CliError::io(&ckpt_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .filter(|n| n.ends_with(".ckpt"))
            .collect();
        names.sort();
        for name in names {
            checkpoints += 1;
            if let Err(e) = checkpoint::read(&ckpt_dir.join(&name)) {
                bad_checkpoints.push((format!("{CHECKPOINT_DIR}/{name}"), e.code()));
            }
        }
    }
    Ok(RunReport {
        summary,
        manifest,
        rows,
        checkpoints,
        modified,
        bad_checkpoints,
    })
}
