//! Run bookkeeping: the provenance record written next to every output and
//! cleanup of partial outputs when a subcommand fails.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Every flag after defaults were applied.
    pub flags: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub threads: usize,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Path of the provenance record for a primary output.
pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".run.json");
    primary.with_file_name(name)
}

/// Tracks what a run has written so far. Unless [`Outputs::commit`] is
/// called, everything tracked is deleted on drop.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates `dir` (and parents) and removes it on failure if it did not
    /// exist before.
    pub fn dir(&mut self, dir: &Path) -> Result<()> {
        if !dir.exists() {
            let mut top = dir;
            while let Some(p) = top
                .parent()
                .filter(|p| !p.as_os_str().is_empty() && !p.exists())
            {
                top = p;
            }
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            self.dirs.push(top.to_path_buf());
        }
        Ok(())
    }

    /// Registers a file the run is about to produce by other means.
    pub fn track(&mut self, path: &Path) {
        self.files.push(path.to_path_buf());
    }

    pub fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            self.dir(parent)?;
        }
        self.track(path);
        fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.files.clone()
    }

    /// Writes the run manifest beside `primary` and keeps all outputs.
    pub fn commit(mut self, primary: &Path, mut manifest: RunManifest) -> Result<()> {
        manifest.outputs = self.paths();
        let text = serde_json::to_string_pretty(&manifest)?;
        self.write(&manifest_path(primary), text + "\n")?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in self.files.iter().rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir_all(d);
        }
    }
}
