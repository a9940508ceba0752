//! Turns raw crawled files into training documents.

pub mod notebook;

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FileKind, Origin, RawFile};
use crate::sha256_hex;
pub use notebook::{
    detect_base64_image_cell, linearize_notebook, parse_notebook, CellType, ImageDetector, NotebookCell,
    NotebookError, SentinelConfig,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub owner: String,
    pub name: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDocument {
    /// SHA-256 of the normalized text.
    pub id: String,
    pub origin: Origin,
    pub kind: FileKind,
    pub text: String,
    pub provenance: Provenance,
    pub last_modified_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
}

impl SourceDocument {
    pub fn new(
        origin: Origin,
        kind: FileKind,
        text: String,
        provenance: Provenance,
        last_modified_at: DateTime<Utc>,
    ) -> Self {
        Self {
            id: document_id(&text),
            origin,
            kind,
            text,
            provenance,
            last_modified_at,
            token_count: None,
        }
    }

    /// Mixture subset this document belongs to, e.g. `qko-code`.
    pub fn subset_name(&self) -> String {
        subset_name(self.origin, self.kind)
    }
}

pub fn subset_name(origin: Origin, kind: FileKind) -> String {
    format!("{}-{}", origin.tag(), kind.tag())
}

/// LF line endings, trailing whitespace stripped from every line.
pub fn normalize_text(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut out = String::with_capacity(unified.len());
    for (i, line) in unified.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(line.trim_end());
    }
    out
}

pub fn document_id(text: &str) -> String {
    sha256_hex(normalize_text(text))
}

/// Default recency cutoff: 2023-01-01T00:00:00Z.
pub fn default_cutoff() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
}

/// Keeps documents modified at or after `cutoff`, in order.
pub fn filter_by_recency(docs: Vec<SourceDocument>, cutoff: DateTime<Utc>) -> Vec<SourceDocument> {
    docs.into_iter()
        .filter(|d| d.last_modified_at >= cutoff)
        .collect()
}

fn survivor_rank(doc: &SourceDocument) -> (Origin, DateTime<Utc>, &Provenance) {
    // Origin orders Official before Community.
    (doc.origin, doc.last_modified_at, &doc.provenance)
}

/// Keeps one document per normalized text. The survivor of each duplicate
/// group is the official-origin copy, then the earliest modified, then the
/// smallest provenance; survivors appear in the order their group first
/// appears in the input.
pub fn dedup_exact(docs: Vec<SourceDocument>) -> Vec<SourceDocument> {
    let mut best: HashMap<String, usize> = HashMap::new();
    let mut group_order: Vec<String> = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        match best.get_mut(&doc.id) {
            Some(current) => {
                if survivor_rank(doc) < survivor_rank(&docs[*current]) {
                    *current = i;
                }
            }
            None => {
                best.insert(doc.id.clone(), i);
                group_order.push(doc.id.clone());
            }
        }
    }
    let keep: Vec<usize> = group_order.iter().map(|id| best[id]).collect();
    let mut slots: Vec<Option<SourceDocument>> = docs.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| slots[i].take().expect("each index kept once"))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketStats {
    pub documents: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Keyed by subset name (`qko-code`, `qk-code`, `qko-notebook`, `qk-notebook`).
    pub buckets: BTreeMap<String, BucketStats>,
    pub total: BucketStats,
}

impl CorpusStats {
    pub fn bucket(&self, origin: Origin, kind: FileKind) -> BucketStats {
        self.buckets
            .get(&subset_name(origin, kind))
            .copied()
            .unwrap_or_default()
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("document {id} ({path}) has no token count")]
pub struct MissingTokenCount {
    pub id: String,
    pub path: String,
}

/// Per origin × kind document and token totals. All four buckets are always present.
pub fn corpus_report(docs: &[SourceDocument]) -> Result<CorpusStats, MissingTokenCount> {
    let mut stats = CorpusStats::default();
    for origin in [Origin::Official, Origin::Community] {
        for kind in [FileKind::Script, FileKind::Notebook] {
            stats
                .buckets
                .insert(subset_name(origin, kind), BucketStats::default());
        }
    }
    for doc in docs {
        let tokens = doc.token_count.ok_or_else(|| MissingTokenCount {
            id: doc.id.clone(),
            path: format!(
                "{}/{}:{}",
                doc.provenance.owner, doc.provenance.name, doc.provenance.path
            ),
        })?;
        let bucket = stats.buckets.entry(doc.subset_name()).or_default();
        bucket.documents += 1;
        bucket.tokens += tokens;
        stats.total.documents += 1;
        stats.total.tokens += tokens;
    }
    Ok(stats)
}

/// Reason-coded drop counters for a curation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropLog {
    pub malformed_notebook: usize,
    pub non_utf8: usize,
    pub stale: usize,
    pub duplicate: usize,
}

impl DropLog {
    /// Drops caused by unreadable input, as opposed to policy filters.
    pub fn unreadable(&self) -> usize {
        self.malformed_notebook + self.non_utf8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurateOptions {
    pub cutoff: DateTime<Utc>,
    pub sentinels: SentinelConfig,
    pub image_detector: ImageDetector,
}

impl Default for CurateOptions {
    fn default() -> Self {
        Self {
            cutoff: default_cutoff(),
            sentinels: SentinelConfig::default(),
            image_detector: ImageDetector::default(),
        }
    }
}

/// Converts one raw file into a document. Notebooks are linearized.
pub fn document_from_raw(file: &RawFile, options: &CurateOptions) -> Result<SourceDocument, NotebookError> {
    let text = match file.kind {
        FileKind::Script => std::str::from_utf8(&file.content)
            .map_err(|_| NotebookError::NotUtf8)?
            .to_string(),
        FileKind::Notebook => {
            let cells = parse_notebook(&file.content)?;
            linearize_notebook(&cells, &options.sentinels, &options.image_detector)
        }
    };
    Ok(SourceDocument::new(
        file.repo.origin,
        file.kind,
        text,
        Provenance {
            owner: file.repo.owner.clone(),
            name: file.repo.name.clone(),
            path: file.path.clone(),
        },
        file.last_modified_at,
    ))
}

/// Full curation: convert, recency filter, then dedup on the final text.
/// The result is sorted by provenance.
pub fn curate(files: &[RawFile], options: &CurateOptions) -> (Vec<SourceDocument>, DropLog) {
    let mut log = DropLog::default();
    let mut docs = Vec::with_capacity(files.len());
    for file in files {
        match document_from_raw(file, options) {
            Ok(doc) => docs.push(doc),
            Err(NotebookError::NotUtf8) => log.non_utf8 += 1,
            Err(err) => {
                log::debug!("{}/{}: {err}", file.repo.full_name(), file.path);
                log.malformed_notebook += 1;
            }
        }
    }
    let before = docs.len();
    let docs = filter_by_recency(docs, options.cutoff);
    log.stale = before - docs.len();
    let before = docs.len();
    let mut docs = dedup_exact(docs);
    log.duplicate = before - docs.len();
    docs.sort_by(|a, b| a.provenance.cmp(&b.provenance));
    (docs, log)
}
