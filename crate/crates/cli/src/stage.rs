//! Per-stage output directories. Each stage directory holds its artifacts,
//! the resolved `config.toml`, and a `manifest.json` written last, so a
//! directory without a manifest is an incomplete run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Process exit statuses.
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_INFRA: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, inputs or missing prerequisites.
    Validation(anyhow::Error),
    /// Network, endpoint, sandbox or filesystem trouble.
    Infra(anyhow::Error),
    /// Artifacts were written but more inputs were lost than allowed.
    Partial(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Infra(_) => EXIT_INFRA,
            Failure::Partial(_) => EXIT_PARTIAL,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(e) => write!(f, "error: {e:#}"),
            Failure::Infra(e) => write!(f, "infrastructure error: {e:#}"),
            Failure::Partial(why) => write!(f, "partial result: {why}"),
        }
    }
}

pub type StageResult<T = ()> = Result<T, Failure>;

/// Classifies an error while converting it.
pub trait Classify<T> {
    fn validation(self) -> StageResult<T>;
    fn infra(self) -> StageResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn validation(self) -> StageResult<T> {
        self.map_err(|e| Failure::Validation(e.into()))
    }
    fn infra(self) -> StageResult<T> {
        self.map_err(|e| Failure::Infra(e.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    /// Upstream files this stage read, with their SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Artifacts in the stage directory, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

pub fn hash_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(qcorpus::sha256_hex(bytes))
}

/// An in-progress stage directory.
pub struct Stage {
    pub dir: PathBuf,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Stage {
    /// Creates `dir` and removes any previous manifest so an interrupted
    /// rerun cannot look complete.
    pub fn begin(dir: PathBuf, command: &'static str) -> StageResult<Self> {
        fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))
            .infra()?;
        let manifest = dir.join(MANIFEST);
        if manifest.exists() {
            fs::remove_file(&manifest)
                .with_context(|| format!("removing stale {}", manifest.display()))
                .infra()?;
        }
        Ok(Self {
            dir,
            command,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn input(&mut self, label: impl Into<String>, path: &Path) -> StageResult {
        let hash = hash_file(path).validation()?;
        self.inputs.insert(label.into(), hash);
        Ok(())
    }

    pub fn output(&mut self, name: &str) -> StageResult {
        let hash = hash_file(&self.path(name)).infra()?;
        self.outputs.insert(name.to_string(), hash);
        Ok(())
    }

    pub fn write_output(&mut self, name: &str, contents: impl AsRef<[u8]>) -> StageResult {
        let path = self.path(name);
        fs::write(&path, contents)
            .with_context(|| format!("writing {}", path.display()))
            .infra()?;
        self.output(name)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> StageResult {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write_output(name, text)
    }

    pub fn finish(self, config: &PipelineConfig, summary: serde_json::Value) -> StageResult<StageManifest> {
        let config_path = self.dir.join(CONFIG_FILE);
        fs::write(&config_path, config.to_toml())
            .with_context(|| format!("writing {}", config_path.display()))
            .infra()?;
        let manifest = StageManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            inputs: self.inputs,
            outputs: self.outputs,
            summary,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))
            .infra()?;
        Ok(manifest)
    }
}

/// Loads the manifest of a finished upstream stage, or explains which
/// command has to run first.
pub fn require(dir: &Path, producer: &str) -> StageResult<StageManifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(Failure::Validation(anyhow!(
            "missing {}: run `qcorpus {producer}` first (with the same --workdir)",
            path.display()
        )));
    }
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))
        .infra()?;
    let manifest: StageManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .validation()?;
    if manifest.command != producer {
        return Err(Failure::Validation(anyhow!(
            "{} was written by `{}`, expected `{producer}`",
            path.display(),
            manifest.command
        )));
    }
    Ok(manifest)
}

/// Fails with [`Failure::Partial`] when `lost / total` exceeds `threshold`.
pub fn check_partial(what: &str, lost: usize, total: usize, threshold: f64) -> StageResult {
    if total > 0 && lost as f64 / total as f64 > threshold {
        return Err(Failure::Partial(format!(
            "{lost} of {total} {what} lost, above the {:.0}% threshold",
            threshold * 100.0
        )));
    }
    Ok(())
}
