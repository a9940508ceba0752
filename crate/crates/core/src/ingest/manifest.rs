//! On-disk crawl output: a JSON Lines repository manifest, a file index, and a
//! content store keyed by SHA-256.
//!
//! ```text
//! <dir>/repos.jsonl      one RepoRecord per line
//! <dir>/files.jsonl      one FileEntry per line
//! <dir>/store/<sha256>   raw blob bytes
//! <dir>/snapshot.json    crawl timestamp and counters
//! ```

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FileKind, RawFile, RepoRecord};
use crate::sha256_hex;

pub const REPOS_FILE: &str = "repos.jsonl";
pub const FILES_FILE: &str = "files.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const STORE_DIR: &str = "store";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("file entry {owner}/{name}:{path} references an unknown repository")]
    UnknownRepo {
        owner: String,
        name: String,
        path: String,
    },
    #[error("content store is missing blob {0}")]
    MissingBlob(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub owner: String,
    pub name: String,
    pub path: String,
    pub kind: FileKind,
    pub content_hash: String,
    pub last_modified_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub crawled_at: DateTime<Utc>,
    pub repositories: usize,
    pub files: usize,
    pub skipped_oversized: usize,
    pub missing_branches: Vec<String>,
    pub failed_repositories: Vec<String>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ManifestError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes the crawl output. Repositories and files are written in the order
/// given; callers sort for reproducible manifests.
pub fn write_crawl(
    dir: &Path,
    records: &[Arc<RepoRecord>],
    files: &[RawFile],
    snapshot: &Snapshot,
) -> Result<(), ManifestError> {
    let store = dir.join(STORE_DIR);
    fs::create_dir_all(&store).map_err(io_err(&store))?;

    let repos_path = dir.join(REPOS_FILE);
    write_jsonl(&repos_path, records.iter().map(|r| r.as_ref())).map_err(io_err(&repos_path))?;

    let mut entries = Vec::with_capacity(files.len());
    for file in files {
        let hash = sha256_hex(&file.content);
        let blob = store.join(&hash);
        if !blob.exists() {
            fs::write(&blob, &file.content).map_err(io_err(&blob))?;
        }
        entries.push(FileEntry {
            owner: file.repo.owner.clone(),
            name: file.repo.name.clone(),
            path: file.path.clone(),
            kind: file.kind,
            content_hash: hash,
            last_modified_at: file.last_modified_at,
        });
    }
    let files_path = dir.join(FILES_FILE);
    write_jsonl(&files_path, &entries).map_err(io_err(&files_path))?;

    let snapshot_path = dir.join(SNAPSHOT_FILE);
    let json = serde_json::to_string_pretty(snapshot).expect("snapshot serializes");
    fs::write(&snapshot_path, json + "\n").map_err(io_err(&snapshot_path))
}

pub fn read_repos(dir: &Path) -> Result<Vec<RepoRecord>, ManifestError> {
    read_jsonl(&dir.join(REPOS_FILE))
}

/// Loads every file of a crawl back from the manifest and content store.
pub fn read_crawl(dir: &Path) -> Result<Vec<RawFile>, ManifestError> {
    let repos: HashMap<(String, String), Arc<RepoRecord>> = read_repos(dir)?
        .into_iter()
        .map(|r| ((r.owner.clone(), r.name.clone()), Arc::new(r)))
        .collect();
    let entries: Vec<FileEntry> = read_jsonl(&dir.join(FILES_FILE))?;
    let store = dir.join(STORE_DIR);
    entries
        .into_iter()
        .map(|entry| {
            let repo = repos
                .get(&(entry.owner.clone(), entry.name.clone()))
                .cloned()
                .ok_or_else(|| ManifestError::UnknownRepo {
                    owner: entry.owner.clone(),
                    name: entry.name.clone(),
                    path: entry.path.clone(),
                })?;
            let blob = store.join(&entry.content_hash);
            let content =
                fs::read(&blob).map_err(|_| ManifestError::MissingBlob(entry.content_hash.clone()))?;
            Ok(RawFile {
                repo,
                path: entry.path,
                kind: entry.kind,
                content,
                last_modified_at: entry.last_modified_at,
            })
        })
        .collect()
}
