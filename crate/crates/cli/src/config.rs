use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, Utc};
use qcorpus::curate::{CurateOptions, ImageDetector, SentinelConfig};
use qcorpus::eval::InfraErrorPolicy;
use qcorpus::ingest::{CrawlPolicy, ExtensionMap, FileKind};
use qcorpus::mixture::PackMode;
use qcorpus::tunedata::InstructSource;
use serde::{Deserialize, Serialize};

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunConfig,
    pub crawl: CrawlConfig,
    pub curate: CurateConfig,
    pub tokenizer: TokenizerConfig,
    pub mix: MixConfig,
    pub schedule: ScheduleConfig,
    pub tunedata: TunedataConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub partial_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrawlConfig {
    pub keyword: String,
    pub page_limit: u32,
    pub api_base: String,
    pub license_allowlist: Vec<String>,
    pub official_orgs: Vec<String>,
    pub max_file_bytes: u64,
    pub include_archived: bool,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub extensions: BTreeMap<String, FileKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurateConfig {
    pub cutoff: DateTime<Utc>,
    pub image_min_run: usize,
    pub sentinels: SentinelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    Byte,
    Subprocess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    pub kind: TokenizerKind,
    pub command: Vec<String>,
    /// Only read for `subprocess`; the byte tokenizer fixes its own ids.
    pub vocabulary_size: u32,
    pub separator_id: u32,
    pub pad_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    pub context_length: usize,
    pub pack_mode: PackMode,
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub epochs: f64,
    pub batch_size: u64,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunedataConfig {
    pub sequence_length: usize,
    pub epochs: f64,
    pub batch_size: u64,
    pub targets: BTreeMap<InstructSource, usize>,
    pub sources: BTreeMap<InstructSource, String>,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub generate: usize,
    pub template: String,
    pub endpoint: String,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub retry_budget: u32,
    pub timeout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    Local,
    Runner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// A JSON Lines benchmark path, or `sample` for the bundled one.
    pub benchmark: String,
    pub endpoint: String,
    pub k: Vec<u32>,
    pub samples_per_task: u32,
    pub timeout: f64,
    pub memory_cap_bytes: u64,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub retry_budget: u32,
    pub infra_policy: InfraErrorPolicy,
    pub executor: ExecutorKind,
    /// Runner invocation; `{image}` is replaced by `sandbox_image`.
    pub runner_command: Vec<String>,
    pub sandbox_image: String,
    pub gen_workers: usize,
    pub exec_workers: usize,
}

impl PipelineConfig {
    pub fn crawl_policy(&self) -> CrawlPolicy {
        let c = &self.crawl;
        CrawlPolicy {
            keyword: c.keyword.clone(),
            page_limit: c.page_limit,
            license_allowlist: c.license_allowlist.iter().cloned().collect(),
            official_orgs: c.official_orgs.clone(),
            max_file_bytes: c.max_file_bytes,
            extensions: ExtensionMap(c.extensions.clone()),
            include_archived: c.include_archived,
        }
    }

    pub fn curate_options(&self) -> CurateOptions {
        CurateOptions {
            cutoff: self.curate.cutoff,
            sentinels: self.curate.sentinels.clone(),
            image_detector: ImageDetector {
                min_run: self.curate.image_min_run,
            },
        }
    }

    /// Checks cross-field constraints that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, why: &str| Err(anyhow!("{key}: {why}"));
        if !(0.0..=1.0).contains(&self.run.partial_threshold) {
            return err("run.partial_threshold", "must lie in [0, 1]");
        }
        if self.run.workers == 0 {
            return err("run.workers", "must be positive");
        }
        if self.crawl.keyword.trim().is_empty() {
            return err("crawl.keyword", "must not be empty");
        }
        for ext in self.crawl.extensions.keys() {
            if !ext.starts_with('.') {
                return err(&format!("crawl.extensions.{ext}"), "extensions start with a dot");
            }
        }
        if self.curate.sentinels.validate().is_err() {
            return err(
                "curate.sentinels",
                "tokens must be non-empty and pairwise distinct",
            );
        }
        if self.tokenizer.kind == TokenizerKind::Subprocess && self.tokenizer.command.is_empty() {
            return err(
                "tokenizer.command",
                "required when tokenizer.kind = \"subprocess\"",
            );
        }
        if self.mix.context_length < 2 {
            return err("mix.context_length", "must be at least 2");
        }
        if self.mix.weights.is_empty() {
            return err("mix.weights", "at least one subset is required");
        }
        if self.eval.k.is_empty() || self.eval.k.contains(&0) {
            return err("eval.k", "needs one or more positive values");
        }
        if let Some(&k) = self.eval.k.iter().find(|&&k| k > self.eval.samples_per_task) {
            return err("eval.k", &format!("k = {k} exceeds eval.samples_per_task"));
        }
        if !(self.eval.timeout > 0.0 && self.eval.timeout.is_finite()) {
            return err("eval.timeout", "must be a positive number of seconds");
        }
        if self.eval.executor == ExecutorKind::Runner && self.eval.runner_command.is_empty() {
            return err("eval.runner_command", "required when eval.executor = \"runner\"");
        }
        let t = self.tunedata.synthetic.timeout;
        if t.is_nan() || t <= 0.0 {
            return err("tunedata.synthetic.timeout", "must be positive");
        }
        Ok(())
    }

    /// The resolved configuration as TOML; its SHA-256 identifies a run.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn hash(&self) -> String {
        qcorpus::sha256_hex(self.to_toml())
    }

    pub fn source_path(&self, source: InstructSource) -> Option<PathBuf> {
        self.tunedata
            .sources
            .get(&source)
            .filter(|p| !p.is_empty())
            .map(PathBuf::from)
    }
}

/// Generation endpoint used when the config leaves it empty.
pub const ENDPOINT_ENV: &str = "GEN_ENDPOINT_URL";
/// Sandbox image tag used when the config leaves it empty.
pub const SANDBOX_IMAGE_ENV: &str = "SANDBOX_IMAGE";

/// Fills empty endpoint and image settings from the environment. The code
/// host token is read by the crawler itself and never enters the config.
pub fn apply_env(cfg: &mut PipelineConfig) {
    apply_env_from(cfg, |key| std::env::var(key).ok().filter(|v| !v.is_empty()));
}

fn apply_env_from(cfg: &mut PipelineConfig, get: impl Fn(&str) -> Option<String>) {
    let fill = |slot: &mut String, key: &str| {
        if slot.is_empty() {
            if let Some(v) = get(key) {
                *slot = v;
            }
        }
    };
    fill(&mut cfg.eval.endpoint, ENDPOINT_ENV);
    fill(&mut cfg.tunedata.synthetic.endpoint, ENDPOINT_ENV);
    fill(&mut cfg.eval.sandbox_image, SANDBOX_IMAGE_ENV);
}

/// Overlays `top` onto `base`, recursing into tables.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (key, value) in t {
                match b.get_mut(&key) {
                    Some(existing) => merge(existing, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Parses `a.b.c=value`. The value is read as a TOML literal when it parses
/// as one and as a bare string otherwise.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .with_context(|| format!("override {spec:?} is not of the form key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override {spec:?} has an empty key segment");
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn apply_override(root: &mut toml::Value, path: &[String], value: toml::Value) -> Result<()> {
    let mut node = root;
    for (i, key) in path.iter().enumerate() {
        let table = node
            .as_table_mut()
            .with_context(|| format!("{} is not a table", path[..i].join(".")))?;
        if i + 1 == path.len() {
            table.insert(key.clone(), value);
            return Ok(());
        }
        node = table
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("override path is non-empty")
}

/// Defaults, then the user file, then `--set` overrides, then validation.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig> {
    let mut root: toml::Value = toml::from_str(DEFAULT_CONFIG).expect("bundled defaults parse");
    if let Some(path) = path {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let user: toml::Value =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        merge(&mut root, user);
    }
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        apply_override(&mut root, &key, value)?;
    }
    let config: PipelineConfig = serde_path_to_error::deserialize(root).map_err(|e| {
        let at = e.path().to_string();
        anyhow!("invalid config at {at}: {}", e.into_inner())
    })?;
    config.validate()?;
    Ok(config)
}
