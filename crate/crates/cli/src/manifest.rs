use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command run, written into its output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config: serde_json::Value,
    pub build_id: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Output directory staged next to its final location and moved into place on success,
/// so a directory is either the previous complete run or the new complete run.
pub struct Staged {
    target: PathBuf,
    staging: PathBuf,
    force: bool,
    outputs: Vec<PathBuf>,
}

impl Staged {
    pub fn new(target: &Path, force: bool) -> Result<Self> {
        if target.exists() && !force {
            let occupied = !target.is_dir() || fs::read_dir(target)?.next().is_some();
            if occupied {
                bail!("output directory {} already exists; pass --force to overwrite", target.display());
            }
        }
        let name = target
            .file_name()
            .with_context(|| format!("output path {} has no directory name", target.display()))?
            .to_string_lossy()
            .into_owned();
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;
        Ok(Self { target: target.to_path_buf(), staging, force, outputs: Vec::new() })
    }

    /// Where to write `relative` now; it is listed in the manifest under its final path.
    pub fn path(&mut self, relative: impl AsRef<Path>) -> PathBuf {
        self.outputs.push(self.target.join(relative.as_ref()));
        self.staging.join(relative)
    }

    /// Staging location without registering an output.
    pub fn root(&self) -> &Path {
        &self.staging
    }

    pub fn commit(mut self, mut manifest: RunManifest) -> Result<PathBuf> {
        manifest.outputs = std::mem::take(&mut self.outputs);
        manifest.finished = now();
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(self.staging.join(MANIFEST_FILE), text)?;
        if self.target.exists() {
            if !self.force && fs::read_dir(&self.target)?.next().is_some() {
                bail!("output directory {} appeared during the run", self.target.display());
            }
            if self.target.is_dir() {
                fs::remove_dir_all(&self.target)?;
            } else {
                fs::remove_file(&self.target)?;
            }
        }
        fs::rename(&self.staging, &self.target)
            .with_context(|| format!("moving results into {}", self.target.display()))?;
        Ok(self.target.clone())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if self.staging.exists() {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
