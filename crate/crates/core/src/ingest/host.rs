use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Repository metadata as reported by a code host, before origin classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoListing {
    pub host_id: String,
    pub owner: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub license_id: Option<String>,
    pub is_fork: bool,
    pub default_branch: String,
    pub last_pushed_at: DateTime<Utc>,
    #[serde(default)]
    pub archived: bool,
}

/// One page of search results.
#[derive(Debug, Clone, Default)]
pub struct SearchPage {
    pub items: Vec<RepoListing>,
    pub has_more: bool,
}

/// A blob entry of a branch tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEntry {
    pub path: String,
    pub size: u64,
    pub sha: String,
}

#[derive(Debug, Error)]
pub enum HostError {
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("rate limit exhausted; resets at {reset_at}")]
    RateLimited { reset_at: DateTime<Utc> },
    #[error("unexpected HTTP status {status} for {url}")]
    Status { status: u16, url: String },
    #[error("malformed host response: {0}")]
    Decode(String),
}

impl HostError {
    /// Whether repeating the same call later may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, HostError::Network { .. } | HostError::RateLimited { .. })
    }
}

/// The subset of a code host's REST surface the crawler needs.
///
/// Implementations must be shareable across fetch workers; any rate-limit
/// bookkeeping is the implementation's responsibility.
pub trait CodeHost: Send + Sync {
    /// One page (1-based) of repositories matching `keyword` in name or description.
    fn search_page(&self, keyword: &str, page: u32) -> Result<SearchPage, HostError>;

    /// Blob entries of `branch` at its latest commit. `None` when the branch does not exist.
    fn list_tree(&self, owner: &str, name: &str, branch: &str) -> Result<Option<Vec<TreeEntry>>, HostError>;

    fn fetch_blob(&self, owner: &str, name: &str, entry: &TreeEntry) -> Result<Vec<u8>, HostError>;

    /// Time of the latest commit on `branch` touching `path`, if the host exposes it.
    fn last_commit_time(
        &self,
        _owner: &str,
        _name: &str,
        _branch: &str,
        _path: &str,
    ) -> Result<Option<DateTime<Utc>>, HostError> {
        Ok(None)
    }
}
