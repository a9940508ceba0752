//! Repository discovery, crawl-policy filtering and default-branch file fetching.

pub mod github;
mod host;
pub mod manifest;
pub mod memory;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use host::{CodeHost, HostError, RepoListing, SearchPage, TreeEntry};

/// Corpus origin tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    /// Repository owned by one of the official organizations.
    #[serde(rename = "qko")]
    Official,
    #[serde(rename = "qk")]
    Community,
}

impl Origin {
    pub fn tag(self) -> &'static str {
        match self {
            Origin::Official => "qko",
            Origin::Community => "qk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Script,
    Notebook,
}

impl FileKind {
    /// Subset-name suffix used in mixture plans.
    pub fn tag(self) -> &'static str {
        match self {
            FileKind::Script => "code",
            FileKind::Notebook => "notebook",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoRecord {
    pub host_id: String,
    pub owner: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub license_id: Option<String>,
    pub is_fork: bool,
    pub default_branch: String,
    pub last_pushed_at: DateTime<Utc>,
    pub origin: Origin,
}

impl RepoRecord {
    pub fn from_listing(listing: RepoListing, official_orgs: &[String]) -> Self {
        let origin = origin_for_owner(&listing.owner, official_orgs);
        Self {
            host_id: listing.host_id,
            owner: listing.owner,
            name: listing.name,
            description: listing.description,
            license_id: listing.license_id,
            is_fork: listing.is_fork,
            default_branch: listing.default_branch,
            last_pushed_at: listing.last_pushed_at,
            origin,
        }
    }

    pub fn full_name(&self) -> String {
        format!("{}/{}", self.owner, self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFile {
    pub repo: Arc<RepoRecord>,
    pub path: String,
    pub kind: FileKind,
    pub content: Vec<u8>,
    pub last_modified_at: DateTime<Utc>,
}

/// File extension (including the dot) to file kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExtensionMap(pub BTreeMap<String, FileKind>);

impl Default for ExtensionMap {
    fn default() -> Self {
        Self(BTreeMap::from([
            (".py".to_string(), FileKind::Script),
            (".ipynb".to_string(), FileKind::Notebook),
        ]))
    }
}

impl ExtensionMap {
    pub fn classify(&self, path: &str) -> Option<FileKind> {
        let file_name = path.rsplit('/').next().unwrap_or(path);
        let dot = file_name.rfind('.')?;
        self.0.get(&file_name[dot..].to_ascii_lowercase()).copied()
    }
}

pub const DEFAULT_LICENSES: [&str; 7] = [
    "MIT",
    "Apache-2.0",
    "BSD-2-Clause",
    "BSD-3-Clause",
    "ISC",
    "Unlicense",
    "CC0-1.0",
];

pub const DEFAULT_OFFICIAL_ORGS: [&str; 3] = ["Qiskit", "Qiskit-Community", "Qiskit-Extensions"];

/// 1 MiB.
pub const DEFAULT_MAX_FILE_BYTES: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlPolicy {
    pub keyword: String,
    pub page_limit: u32,
    pub license_allowlist: BTreeSet<String>,
    pub official_orgs: Vec<String>,
    pub max_file_bytes: u64,
    pub extensions: ExtensionMap,
    pub include_archived: bool,
}

impl Default for CrawlPolicy {
    fn default() -> Self {
        Self {
            keyword: "qiskit".to_string(),
            page_limit: 10,
            license_allowlist: DEFAULT_LICENSES.iter().map(|s| s.to_string()).collect(),
            official_orgs: DEFAULT_OFFICIAL_ORGS.iter().map(|s| s.to_string()).collect(),
            max_file_bytes: DEFAULT_MAX_FILE_BYTES,
            extensions: ExtensionMap::default(),
            include_archived: true,
        }
    }
}

impl CrawlPolicy {
    fn allows_license(&self, license_id: Option<&str>) -> bool {
        license_id.is_some_and(|id| {
            self.license_allowlist
                .iter()
                .any(|allowed| allowed.eq_ignore_ascii_case(id))
        })
    }
}

fn origin_for_owner(owner: &str, official_orgs: &[String]) -> Origin {
    if official_orgs.iter().any(|org| org.eq_ignore_ascii_case(owner)) {
        Origin::Official
    } else {
        Origin::Community
    }
}

/// Official iff the owner is one of `official_orgs`, compared case-insensitively.
pub fn classify_origin(record: &RepoRecord, official_orgs: &[String]) -> Origin {
    origin_for_owner(&record.owner, official_orgs)
}

fn matches_keyword(listing: &RepoListing, keyword: &str) -> bool {
    let keyword = keyword.to_lowercase();
    listing.name.to_lowercase().contains(&keyword) || listing.description.to_lowercase().contains(&keyword)
}

/// Pages through the host's search until exhaustion or `policy.page_limit`,
/// keeping repositories whose name or description contains `policy.keyword`.
/// Results are deduplicated by (owner, name).
pub fn search_repositories(
    client: &dyn CodeHost,
    policy: &CrawlPolicy,
) -> Result<Vec<RepoRecord>, HostError> {
    let keyword = policy.keyword.as_str();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for page in 1..=policy.page_limit {
        let result = client.search_page(keyword, page)?;
        for listing in result.items {
            if listing.owner.is_empty() || listing.name.is_empty() {
                log::warn!("skipping search hit without owner/name: {:?}", listing.host_id);
                continue;
            }
            if !matches_keyword(&listing, keyword) || (listing.archived && !policy.include_archived) {
                continue;
            }
            let key = (listing.owner.to_lowercase(), listing.name.to_lowercase());
            if seen.insert(key) {
                out.push(RepoRecord::from_listing(listing, &policy.official_orgs));
            }
        }
        if !result.has_more {
            break;
        }
    }
    Ok(out)
}

/// Drops forks and repositories without an allowlisted license. Order is preserved.
pub fn filter_repositories(records: Vec<RepoRecord>, policy: &CrawlPolicy) -> Vec<RepoRecord> {
    records
        .into_iter()
        .filter(|r| !r.is_fork && policy.allows_license(r.license_id.as_deref()))
        .collect()
}

#[derive(Debug, Default)]
pub struct FetchOutcome {
    pub files: Vec<RawFile>,
    pub skipped_oversized: usize,
    /// Set when the default branch could not be found; the repo is skipped.
    pub missing_branch: bool,
}

/// Fetches every script/notebook blob on the record's default branch.
pub fn fetch_repository_files(
    record: &Arc<RepoRecord>,
    client: &dyn CodeHost,
    policy: &CrawlPolicy,
) -> Result<FetchOutcome, HostError> {
    let mut outcome = FetchOutcome::default();
    let Some(tree) = client.list_tree(&record.owner, &record.name, &record.default_branch)? else {
        log::warn!(
            "{}: default branch {:?} not found, skipping",
            record.full_name(),
            record.default_branch
        );
        outcome.missing_branch = true;
        return Ok(outcome);
    };

    for entry in tree {
        let Some(kind) = policy.extensions.classify(&entry.path) else {
            continue;
        };
        if entry.size > policy.max_file_bytes {
            outcome.skipped_oversized += 1;
            continue;
        }
        let content = client.fetch_blob(&record.owner, &record.name, &entry)?;
        if content.len() as u64 > policy.max_file_bytes {
            outcome.skipped_oversized += 1;
            continue;
        }
        let last_modified_at = client
            .last_commit_time(&record.owner, &record.name, &record.default_branch, &entry.path)?
            .unwrap_or(record.last_pushed_at);
        outcome.files.push(RawFile {
            repo: Arc::clone(record),
            path: entry.path,
            kind,
            content,
            last_modified_at,
        });
    }
    Ok(outcome)
}

#[derive(Debug, Default)]
pub struct CrawlResult {
    /// Sorted by (owner, name, path).
    pub files: Vec<RawFile>,
    pub skipped_oversized: usize,
    pub missing_branches: Vec<String>,
    pub failures: Vec<(String, HostError)>,
}

/// Runs [`fetch_repository_files`] over `records` with at most `workers` threads.
pub fn fetch_all(
    records: &[Arc<RepoRecord>],
    client: &dyn CodeHost,
    policy: &CrawlPolicy,
    workers: usize,
) -> CrawlResult {
    let next = AtomicUsize::new(0);
    let result = Mutex::new(CrawlResult::default());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, records.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(record) = records.get(i) else { break };
                let fetched = fetch_repository_files(record, client, policy);
                let mut acc = result.lock().unwrap();
                match fetched {
                    Ok(outcome) => {
                        acc.skipped_oversized += outcome.skipped_oversized;
                        if outcome.missing_branch {
                            acc.missing_branches.push(record.full_name());
                        }
                        acc.files.extend(outcome.files);
                    }
                    Err(err) => acc.failures.push((record.full_name(), err)),
                }
            });
        }
    });
    let mut result = result.into_inner().unwrap();
    result
        .files
        .sort_by(|a, b| (&a.repo.owner, &a.repo.name, &a.path).cmp(&(&b.repo.owner, &b.repo.name, &b.path)));
    result.missing_branches.sort();
    result.failures.sort_by(|a, b| a.0.cmp(&b.0));
    result
}
