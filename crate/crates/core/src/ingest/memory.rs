//! In-memory [`CodeHost`] for offline runs and tests.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};

use super::host::{CodeHost, HostError, RepoListing, SearchPage, TreeEntry};
use crate::sha256_hex;

#[derive(Debug, Clone)]
pub struct MemoryFile {
    pub path: String,
    pub content: Vec<u8>,
    pub committed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone)]
pub struct MemoryRepo {
    pub listing: RepoListing,
    /// Branch name to files on that branch.
    pub branches: BTreeMap<String, Vec<MemoryFile>>,
}

impl MemoryRepo {
    /// A repository whose default branch holds `files`.
    pub fn new(listing: RepoListing, files: Vec<MemoryFile>) -> Self {
        let mut branches = BTreeMap::new();
        branches.insert(listing.default_branch.clone(), files);
        Self { listing, branches }
    }
}

/// Serves search pages of `page_size` over every repo, like a host whose fuzzy
/// search returns candidates the crawler still has to check.
#[derive(Debug, Clone)]
pub struct MemoryHost {
    repos: Vec<MemoryRepo>,
    page_size: usize,
}

impl MemoryHost {
    pub fn new(repos: Vec<MemoryRepo>) -> Self {
        Self {
            repos,
            page_size: 100,
        }
    }

    pub fn with_page_size(mut self, page_size: usize) -> Self {
        self.page_size = page_size.max(1);
        self
    }

    fn repo(&self, owner: &str, name: &str) -> Option<&MemoryRepo> {
        self.repos
            .iter()
            .find(|r| r.listing.owner == owner && r.listing.name == name)
    }

    fn file(&self, owner: &str, name: &str, path: &str) -> Option<&MemoryFile> {
        let repo = self.repo(owner, name)?;
        repo.branches
            .get(&repo.listing.default_branch)?
            .iter()
            .find(|f| f.path == path)
    }
}

impl CodeHost for MemoryHost {
    fn search_page(&self, _keyword: &str, page: u32) -> Result<SearchPage, HostError> {
        let start = (page.max(1) as usize - 1) * self.page_size;
        let items: Vec<_> = self
            .repos
            .iter()
            .skip(start)
            .take(self.page_size)
            .map(|r| r.listing.clone())
            .collect();
        Ok(SearchPage {
            has_more: start + items.len() < self.repos.len(),
            items,
        })
    }

    fn list_tree(&self, owner: &str, name: &str, branch: &str) -> Result<Option<Vec<TreeEntry>>, HostError> {
        let Some(repo) = self.repo(owner, name) else {
            return Err(HostError::Status {
                status: 404,
                url: format!("memory://{owner}/{name}"),
            });
        };
        Ok(repo.branches.get(branch).map(|files| {
            files
                .iter()
                .map(|f| TreeEntry {
                    path: f.path.clone(),
                    size: f.content.len() as u64,
                    sha: sha256_hex(&f.content),
                })
                .collect()
        }))
    }

    fn fetch_blob(&self, owner: &str, name: &str, entry: &TreeEntry) -> Result<Vec<u8>, HostError> {
        self.file(owner, name, &entry.path)
            .map(|f| f.content.clone())
            .ok_or_else(|| HostError::Status {
                status: 404,
                url: format!("memory://{owner}/{name}/{}", entry.path),
            })
    }

    fn last_commit_time(
        &self,
        owner: &str,
        name: &str,
        _branch: &str,
        path: &str,
    ) -> Result<Option<DateTime<Utc>>, HostError> {
        Ok(self.file(owner, name, path).and_then(|f| f.committed_at))
    }
}
