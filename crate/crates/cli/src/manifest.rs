//! Run manifest written once at the end of every successful command.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gspt::{GsptError, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// The effective configuration, as TOML.
    pub config: String,
    pub seed: u64,
    pub git_describe: String,
    pub threads: usize,
    pub outputs: Vec<PathBuf>,
    pub wall_time_secs: f64,
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

impl RunManifest {
    /// Writes `manifest.json` through a temporary file and a rename.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let tmp = dir.join(".manifest.json.tmp");
        let text = serde_json::to_string_pretty(self).map_err(|e| GsptError::data(e.to_string()))?;
        fs::write(&tmp, text + "\n").map_err(|e| GsptError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| GsptError::io(&path, e))?;
        Ok(path)
    }
}
