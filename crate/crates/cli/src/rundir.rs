use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "MANIFEST";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SERIES_FILE: &str = "timeseries.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunDirLock {
    path: PathBuf,
}

impl RunDirLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| CliError::io(&path, e))?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for RunDirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// One artifact line of the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sha256: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub status: String,
    pub truncated: bool,
    pub error_code: Option<String>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Hashes the listed artifacts (paths relative to `dir`).
    pub fn build(
        dir: &Path,
        artifacts: &[String],
        error_code: Option<&str>,
        truncated: bool,
    ) -> CliResult<Self> {
        let mut entries = artifacts
            .iter()
            .map(|rel| {
                Ok(ManifestEntry {
                    sha256: sha256_file(&dir.join(rel))?,
                    path: rel.clone(),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Self {
            status: if error_code.is_some() {
                "error".into()
            } else {
                "ok".into()
            },
            truncated,
            error_code: error_code.map(str::to_string),
            entries,
        })
    }

    pub fn render(&self) -> String {
        let mut out = format!("status: {}\ntruncated: {}\n", self.status, self.truncated);
        if let Some(code) = &self.error_code {
            out.push_str(&format!("error_code: {code}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!("{}  {}\n", e.sha256, e.path));
        }
        out
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut status = None;
        let mut truncated = None;
        let mut error_code = None;
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(v) = line.strip_prefix("status: ") {
                status = Some(v.to_string());
            } else if let Some(v) = line.strip_prefix("truncated: ") {
                truncated = Some(v == "true");
            } else if let Some(v) = line.strip_prefix("error_code: ") {
                error_code = Some(v.to_string());
            } else if let Some((hash, path)) = line.split_once("  ") {
                entries.push(ManifestEntry {
                    sha256: hash.to_string(),
                    path: path.to_string(),
                });
            } else {
                return Err(CliError::RunDir(format!(
                    "unreadable manifest line {line:?}"
                )));
            }
        }
        Ok(Self {
            status: status.ok_or_else(|| CliError::RunDir("manifest has no status".into()))?,
            truncated: truncated
                .ok_or_else(|| CliError::RunDir("manifest has no truncated flag".into()))?,
            error_code,
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let first = RunDirLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            RunDirLock::acquire(dir.path()),
            Err(CliError::Locked(_))
        ));
        drop(first);
        RunDirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write_file(&dir.path().join("a.txt"), b"abc").unwrap();
        let m =
            Manifest::build(dir.path(), &["a.txt".into()], Some("cfl_violation"), true).unwrap();
        assert_eq!(
            m.entries[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
    }
}
