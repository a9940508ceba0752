//! Instruct-tuning data: mixture assembly, synthetic generate-then-validate,
//! and fixed-length left-padded export.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curate::SourceDocument;
use crate::eval::{
    generate_completion, CompletionEndpoint, ExecLimits, Executor, GenerationConfig, VerdictStatus,
};
use crate::mixture::packfile::{write_packed, PackFileError, PackHeader};
use crate::mixture::{Tokenizer, TokenizerError};

/// Instruct-tuning sequence length.
pub const DEFAULT_SEQUENCE_LENGTH: usize = 2048;
/// Built-in synthetic-code generation template.
pub const SYNTHETIC_CODE_TEMPLATE: &str = include_str!("../assets/synthetic_code.txt");
pub const SEED_PLACEHOLDER: &str = "{{seed}}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructSource {
    Chat,
    Commit,
    SyntheticQa,
    SyntheticCode,
}

impl InstructSource {
    pub const ALL: [InstructSource; 4] = [
        InstructSource::Chat,
        InstructSource::Commit,
        InstructSource::SyntheticQa,
        InstructSource::SyntheticCode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InstructSource::Chat => "chat",
            InstructSource::Commit => "commit",
            InstructSource::SyntheticQa => "synthetic_qa",
            InstructSource::SyntheticCode => "synthetic_code",
        }
    }
}

impl std::fmt::Display for InstructSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InstructSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| format!("unknown instruct source {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructSample {
    pub source: InstructSource,
    pub prompt: String,
    pub response: String,
    /// Synthetic code samples must be true to enter a mixture.
    pub validated: bool,
}

impl InstructSample {
    fn eligible(&self) -> bool {
        self.source != InstructSource::SyntheticCode || self.validated
    }
}

/// Output record: one JSON line per sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructRecord {
    pub source: InstructSource,
    pub prompt: String,
    pub response: String,
}

impl From<&InstructSample> for InstructRecord {
    fn from(s: &InstructSample) -> Self {
        Self {
            source: s.source,
            prompt: s.prompt.clone(),
            response: s.response.clone(),
        }
    }
}

pub fn default_targets() -> BTreeMap<InstructSource, usize> {
    BTreeMap::from([
        (InstructSource::Chat, 8000),
        (InstructSource::Commit, 5000),
        (InstructSource::SyntheticQa, 2700),
        (InstructSource::SyntheticCode, 1000),
    ])
}

#[derive(Debug, Error)]
pub enum TunedataError {
    #[error("source {instruct_source}: {available} eligible sample(s), {required} required (short by {})", required - available)]
    UndersizedSource {
        instruct_source: InstructSource,
        available: usize,
        required: usize,
    },
    #[error("no seed documents supplied")]
    NoSeedDocuments,
    #[error("prompt template {0:?} lacks the {SEED_PLACEHOLDER} placeholder")]
    TemplateMissingPlaceholder(String),
    #[error("pair already has verdict {0:?}")]
    NotPending(SyntheticVerdict),
    #[error("target length must be positive")]
    ZeroTargetLength,
    #[error("{path}:{line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    PackFile(#[from] PackFileError),
}

/// Draws exactly `targets[s]` samples per source without replacement and
/// shuffles the union. Sources absent from `targets` contribute nothing.
/// Unvalidated synthetic code samples are never eligible.
pub fn assemble_instruct_mixture(
    sources: &BTreeMap<InstructSource, Vec<InstructSample>>,
    targets: &BTreeMap<InstructSource, usize>,
    seed: u64,
) -> Result<Vec<InstructSample>, TunedataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mixture = Vec::with_capacity(targets.values().sum());
    for (&source, &required) in targets {
        if required == 0 {
            continue;
        }
        let eligible: Vec<&InstructSample> = sources
            .get(&source)
            .map(|v| v.iter().filter(|s| s.source == source && s.eligible()).collect())
            .unwrap_or_default();
        if eligible.len() < required {
            return Err(TunedataError::UndersizedSource {
                instruct_source: source,
                available: eligible.len(),
                required,
            });
        }
        let picked = rand::seq::index::sample(&mut rng, eligible.len(), required);
        mixture.extend(picked.into_iter().map(|i| eligible[i].clone()));
    }
    mixture.shuffle(&mut rng);
    Ok(mixture)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticVerdict {
    Pending,
    Pass,
    Fail,
    Timeout,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub prompt: String,
    pub code: String,
    pub tests: String,
    pub verdict: SyntheticVerdict,
    pub seed_doc_id: String,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Result<Self, TunedataError> {
        let (name, text) = (name.into(), text.into());
        if !text.contains(SEED_PLACEHOLDER) {
            return Err(TunedataError::TemplateMissingPlaceholder(name));
        }
        Ok(Self { name, text })
    }

    pub fn builtin() -> Self {
        Self::new("synthetic_code", SYNTHETIC_CODE_TEMPLATE).expect("built-in template is valid")
    }

    pub fn load(path: &Path) -> Result<Self, TunedataError> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::new(name, text)
    }

    pub fn render(&self, seed_text: &str) -> String {
        self.text.replace(SEED_PLACEHOLDER, seed_text)
    }
}

/// Body of the first fenced block in `section`.
fn first_fence(section: &str) -> Option<String> {
    let start = section.find("```")?;
    let after = &section[start + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].to_string())
}

/// Splits a generation into (prompt, code, tests). Requires `### Prompt`,
/// `### Code` with a fenced block, and `### Tests` with a fenced block, in
/// that order.
pub fn parse_generation(text: &str) -> Option<(String, String, String)> {
    let p = text.find("### Prompt")?;
    let c = p + text[p..].find("### Code")?;
    let t = c + text[c..].find("### Tests")?;
    let prompt = text[p + "### Prompt".len()..c].trim().to_string();
    let code = first_fence(&text[c..t])?;
    let tests = first_fence(&text[t..])?;
    if prompt.is_empty() || code.trim().is_empty() || tests.trim().is_empty() {
        return None;
    }
    Some((prompt, code, tests))
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub generation: GenerationConfig,
    pub retry_budget: u32,
    pub workers: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            generation: GenerationConfig {
                temperature: 0.7,
                max_new_tokens: 1024,
                stop_sequences: Vec::new(),
                seed: Some(0),
            },
            retry_budget: 2,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticBatch {
    /// Ordered by request index.
    pub pairs: Vec<SyntheticPair>,
    pub requested: usize,
    pub dropped_malformed: usize,
    pub endpoint_errors: usize,
}

/// Issues `n` generation requests, cycling through `seed_docs`. Malformed
/// generations are dropped and counted; failed requests are counted.
pub fn generate_synthetic_pairs(
    seed_docs: &[SourceDocument],
    endpoint: &dyn CompletionEndpoint,
    template: &PromptTemplate,
    n: usize,
    config: &SyntheticConfig,
) -> Result<SyntheticBatch, TunedataError> {
    if seed_docs.is_empty() {
        return Err(TunedataError::NoSeedDocuments);
    }
    let results = parallel_map(n, config.workers, |i| {
        let doc = &seed_docs[i % seed_docs.len()];
        let mut generation = config.generation.clone();
        generation.seed = generation.seed.map(|s| s.wrapping_add(i as u64));
        let reply = generate_completion(
            endpoint,
            &template.render(&doc.text),
            &generation,
            config.retry_budget,
        );
        match reply {
            Err(e) => {
                log::warn!("synthetic request {i}: {e}");
                Err(false)
            }
            Ok(text) => parse_generation(&text)
                .map(|(prompt, code, tests)| SyntheticPair {
                    prompt,
                    code,
                    tests,
                    verdict: SyntheticVerdict::Pending,
                    seed_doc_id: doc.id.clone(),
                    template: template.name.clone(),
                })
                .ok_or(true),
        }
    });
    let mut batch = SyntheticBatch {
        requested: n,
        ..Default::default()
    };
    for result in results {
        match result {
            Ok(pair) => batch.pairs.push(pair),
            Err(true) => batch.dropped_malformed += 1,
            Err(false) => batch.endpoint_errors += 1,
        }
    }
    Ok(batch)
}

/// `code ⊕ newline ⊕ tests`; passes iff the interpreter exits cleanly.
pub fn validation_program(pair: &SyntheticPair) -> String {
    format!("{}\n{}\n", pair.code, pair.tests)
}

pub fn validate_synthetic_pair(
    pair: &SyntheticPair,
    executor: &dyn Executor,
    limits: &ExecLimits,
) -> Result<SyntheticPair, TunedataError> {
    if pair.verdict != SyntheticVerdict::Pending {
        return Err(TunedataError::NotPending(pair.verdict));
    }
    let verdict = executor.execute(&validation_program(pair), limits);
    let mut out = pair.clone();
    out.verdict = match verdict.status {
        VerdictStatus::Pass => SyntheticVerdict::Pass,
        VerdictStatus::Fail | VerdictStatus::Crash => SyntheticVerdict::Fail,
        VerdictStatus::Timeout => SyntheticVerdict::Timeout,
        VerdictStatus::InfraError => SyntheticVerdict::Error,
    };
    Ok(out)
}

/// Validates every pending pair over `workers` threads, preserving order.
pub fn validate_all(
    pairs: &[SyntheticPair],
    executor: &dyn Executor,
    limits: &ExecLimits,
    workers: usize,
) -> Result<Vec<SyntheticPair>, TunedataError> {
    parallel_map(pairs.len(), workers, |i| {
        validate_synthetic_pair(&pairs[i], executor, limits)
    })
    .into_iter()
    .collect()
}

/// Pass-verdict pairs as validated synthetic code samples.
pub fn validated_samples(pairs: &[SyntheticPair]) -> Vec<InstructSample> {
    pairs
        .iter()
        .filter(|p| p.verdict == SyntheticVerdict::Pass)
        .map(|p| InstructSample {
            source: InstructSource::SyntheticCode,
            prompt: p.prompt.clone(),
            response: p.code.clone(),
            validated: true,
        })
        .collect()
}

fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, workers: usize, f: F) -> Vec<T> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    let next = AtomicUsize::new(0);
    let mut slots: Vec<(usize, T)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers.clamp(1, n.max(1)))
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= n {
                            break done;
                        }
                        done.push((i, f(i)));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    slots.sort_by_key(|(i, _)| *i);
    slots.into_iter().map(|(_, v)| v).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    OverLength { length: usize, target: usize },
}

/// Prepends `pad_id` up to `target_length`. Longer inputs are rejected,
/// never truncated.
pub fn left_pad(ids: &[u32], target_length: usize, pad_id: u32) -> Result<Vec<u32>, Rejection> {
    if ids.len() > target_length {
        return Err(Rejection::OverLength {
            length: ids.len(),
            target: target_length,
        });
    }
    let mut out = vec![pad_id; target_length - ids.len()];
    out.extend_from_slice(ids);
    Ok(out)
}

#[derive(Deserialize)]
struct RawRecord {
    prompt: String,
    response: String,
}

/// Reads JSON Lines `{prompt, response}` records from a user-supplied file.
/// Every record is tagged with `source`; synthetic code read this way is
/// assumed validated upstream only when `validated` is true.
pub fn read_instruct_records(
    path: &Path,
    source: InstructSource,
    validated: bool,
) -> Result<Vec<InstructSample>, TunedataError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| TunedataError::Record {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(InstructSample {
            source,
            prompt: record.prompt,
            response: record.response,
            validated,
        });
    }
    Ok(out)
}

pub fn write_instruct_jsonl<W: Write>(mut out: W, samples: &[InstructSample]) -> Result<(), TunedataError> {
    for sample in samples {
        serde_json::to_writer(&mut out, &InstructRecord::from(sample)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadExport {
    pub written: usize,
    /// (mixture index, reason)
    pub rejected: Vec<(usize, Rejection)>,
}

/// Tokenizes `prompt ⊕ separator ⊕ response` per sample, left-pads to
/// `target_length` and writes the packed-sequence format with `pad_id` set.
pub fn export_padded<W: Write>(
    out: W,
    samples: &[InstructSample],
    tokenizer: &dyn Tokenizer,
    target_length: usize,
    separator_id: u32,
    pad_id: u32,
) -> Result<PadExport, TunedataError> {
    if target_length == 0 {
        return Err(TunedataError::ZeroTargetLength);
    }
    let mut rows = Vec::with_capacity(samples.len());
    let mut report = PadExport::default();
    for (i, sample) in samples.iter().enumerate() {
        let mut ids = tokenizer.encode(&sample.prompt)?;
        ids.push(separator_id);
        ids.extend(tokenizer.encode(&sample.response)?);
        match left_pad(&ids, target_length, pad_id) {
            Ok(row) => rows.push(row),
            Err(reason) => report.rejected.push((i, reason)),
        }
    }
    let header = PackHeader {
        context_length: target_length as u32,
        separator_id,
        pad_id: Some(pad_id),
        count: rows.len() as u64,
    };
    write_packed(out, &header, &rows)?;
    report.written = rows.len();
    Ok(report)
}
