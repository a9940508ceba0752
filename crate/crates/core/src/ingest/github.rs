//! GitHub REST v3 implementation of [`CodeHost`].

use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use chrono::{DateTime, TimeZone, Utc};
use serde::Deserialize;
use serde_json::Value;

use super::host::{CodeHost, HostError, RepoListing, SearchPage, TreeEntry};

pub const DEFAULT_API_BASE: &str = "https://api.github.com";
/// Environment variable holding the API token.
pub const TOKEN_ENV: &str = "CODE_HOST_TOKEN";

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    /// Longest we are willing to sleep waiting for a rate-limit window to reset.
    pub max_rate_limit_wait: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_rate_limit_wait: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Default)]
struct RateState {
    remaining: Option<u64>,
    reset_at: Option<DateTime<Utc>>,
}

pub struct GitHubClient {
    base_url: String,
    token: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
    per_page: u32,
    rate: Mutex<RateState>,
}

impl GitHubClient {
    pub fn new(base_url: impl Into<String>, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .user_agent("qcorpus-crawler")
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token,
            agent,
            retry: RetryPolicy::default(),
            per_page: 100,
            rate: Mutex::new(RateState::default()),
        }
    }

    /// Client for the public API, token taken from [`TOKEN_ENV`] or `GITHUB_TOKEN`.
    pub fn from_env(base_url: Option<&str>) -> Self {
        let token = std::env::var(TOKEN_ENV)
            .or_else(|_| std::env::var("GITHUB_TOKEN"))
            .ok()
            .filter(|t| !t.is_empty());
        Self::new(base_url.unwrap_or(DEFAULT_API_BASE), token)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_per_page(mut self, per_page: u32) -> Self {
        self.per_page = per_page.clamp(1, 100);
        self
    }

    /// Blocks until the rate-limit window allows another request, or fails
    /// when the reset is further away than we are willing to wait.
    fn await_rate_window(&self) -> Result<(), HostError> {
        let (remaining, reset_at) = {
            let state = self.rate.lock().unwrap();
            (state.remaining, state.reset_at)
        };
        if remaining != Some(0) {
            return Ok(());
        }
        let Some(reset_at) = reset_at else {
            return Ok(());
        };
        let wait = (reset_at - Utc::now()).to_std().unwrap_or(Duration::ZERO);
        if wait > self.retry.max_rate_limit_wait {
            return Err(HostError::RateLimited { reset_at });
        }
        std::thread::sleep(wait);
        self.rate.lock().unwrap().remaining = None;
        Ok(())
    }

    fn record_rate_headers(&self, headers: &ureq::http::HeaderMap) {
        let parse = |name: &str| {
            headers
                .get(name)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<i64>().ok())
        };
        let mut state = self.rate.lock().unwrap();
        if let Some(remaining) = parse("x-ratelimit-remaining") {
            state.remaining = Some(remaining.max(0) as u64);
        }
        if let Some(reset) = parse("x-ratelimit-reset") {
            state.reset_at = Utc.timestamp_opt(reset, 0).single();
        }
    }

    /// GET `path` (relative to the API base). `Ok(None)` on 404.
    fn get_json(&self, path: &str) -> Result<Option<Value>, HostError> {
        let url = format!("{}{}", self.base_url, path);
        let mut attempts = 0;
        let mut rate_limit_hits = 0;
        loop {
            self.await_rate_window()?;
            attempts += 1;
            let mut request = self
                .agent
                .get(&url)
                .header("Accept", "application/vnd.github+json");
            if let Some(token) = &self.token {
                request = request.header("Authorization", &format!("Bearer {token}"));
            }
            let mut response = match request.call() {
                Ok(response) => response,
                Err(err) => {
                    if attempts >= self.retry.max_attempts {
                        return Err(HostError::Network {
                            attempts,
                            message: err.to_string(),
                        });
                    }
                    std::thread::sleep(self.retry.base_delay * 2u32.pow(attempts - 1));
                    continue;
                }
            };
            self.record_rate_headers(response.headers());
            let status = response.status().as_u16();
            match status {
                200..=299 => {
                    let body = response
                        .body_mut()
                        .with_config()
                        .limit(64 << 20)
                        .read_to_vec()
                        .map_err(|e| HostError::Decode(e.to_string()))?;
                    return serde_json::from_slice(&body)
                        .map(Some)
                        .map_err(|e| HostError::Decode(e.to_string()));
                }
                404 | 409 => return Ok(None),
                403 | 429 if self.rate.lock().unwrap().remaining == Some(0) => {
                    // The next iteration waits for the reset or fails with its time.
                    rate_limit_hits += 1;
                    if rate_limit_hits > 1 {
                        let reset_at = self.rate.lock().unwrap().reset_at.unwrap_or_else(Utc::now);
                        return Err(HostError::RateLimited { reset_at });
                    }
                    attempts -= 1;
                }
                500..=599 if attempts < self.retry.max_attempts => {
                    std::thread::sleep(self.retry.base_delay * 2u32.pow(attempts - 1));
                }
                _ => return Err(HostError::Status { status, url }),
            }
        }
    }
}

fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

fn encode_path(path: &str) -> String {
    path.split('/')
        .map(encode_component)
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Deserialize)]
struct SearchResponse {
    total_count: u64,
    items: Vec<SearchItem>,
}

#[derive(Deserialize)]
struct SearchItem {
    id: u64,
    name: String,
    owner: OwnerItem,
    description: Option<String>,
    license: Option<LicenseItem>,
    fork: bool,
    default_branch: String,
    pushed_at: Option<DateTime<Utc>>,
    updated_at: Option<DateTime<Utc>>,
    #[serde(default)]
    archived: bool,
}

#[derive(Deserialize)]
struct OwnerItem {
    login: String,
}

#[derive(Deserialize)]
struct LicenseItem {
    spdx_id: Option<String>,
}

#[derive(Deserialize)]
struct TreeResponse {
    tree: Vec<TreeItem>,
    #[serde(default)]
    truncated: bool,
}

#[derive(Deserialize)]
struct TreeItem {
    path: String,
    #[serde(rename = "type")]
    kind: String,
    size: Option<u64>,
    sha: String,
}

fn decode<T: serde::de::DeserializeOwned>(value: Value) -> Result<T, HostError> {
    serde_json::from_value(value).map_err(|e| HostError::Decode(e.to_string()))
}

impl CodeHost for GitHubClient {
    fn search_page(&self, keyword: &str, page: u32) -> Result<SearchPage, HostError> {
        let path = format!(
            "/search/repositories?q={}+in:name,description&per_page={}&page={}",
            encode_component(keyword),
            self.per_page,
            page
        );
        let Some(value) = self.get_json(&path)? else {
            return Ok(SearchPage::default());
        };
        let response: SearchResponse = decode(value)?;
        let seen_so_far = page as u64 * self.per_page as u64;
        let has_more = !response.items.is_empty() && seen_so_far < response.total_count;
        let items = response
            .items
            .into_iter()
            .map(|item| RepoListing {
                host_id: item.id.to_string(),
                owner: item.owner.login,
                name: item.name,
                description: item.description.unwrap_or_default(),
                // The API reports "NOASSERTION" for unrecognized license files.
                license_id: item
                    .license
                    .and_then(|l| l.spdx_id)
                    .filter(|id| id != "NOASSERTION"),
                is_fork: item.fork,
                default_branch: item.default_branch,
                last_pushed_at: item
                    .pushed_at
                    .or(item.updated_at)
                    .unwrap_or(DateTime::<Utc>::UNIX_EPOCH),
                archived: item.archived,
            })
            .collect();
        Ok(SearchPage { items, has_more })
    }

    fn list_tree(&self, owner: &str, name: &str, branch: &str) -> Result<Option<Vec<TreeEntry>>, HostError> {
        let path = format!(
            "/repos/{}/{}/git/trees/{}?recursive=1",
            encode_component(owner),
            encode_component(name),
            encode_component(branch)
        );
        let Some(value) = self.get_json(&path)? else {
            return Ok(None);
        };
        let response: TreeResponse = decode(value)?;
        if response.truncated {
            log::warn!("{owner}/{name}: tree listing truncated by host");
        }
        Ok(Some(
            response
                .tree
                .into_iter()
                .filter(|item| item.kind == "blob")
                .map(|item| TreeEntry {
                    path: item.path,
                    size: item.size.unwrap_or(0),
                    sha: item.sha,
                })
                .collect(),
        ))
    }

    fn fetch_blob(&self, owner: &str, name: &str, entry: &TreeEntry) -> Result<Vec<u8>, HostError> {
        let path = format!(
            "/repos/{}/{}/git/blobs/{}",
            encode_component(owner),
            encode_component(name),
            encode_component(&entry.sha)
        );
        let value = self.get_json(&path)?.ok_or_else(|| HostError::Status {
            status: 404,
            url: path.clone(),
        })?;
        let content = value
            .get("content")
            .and_then(Value::as_str)
            .ok_or_else(|| HostError::Decode("blob without content".into()))?;
        match value.get("encoding").and_then(Value::as_str) {
            Some("base64") | None => {
                let compact: String = content.chars().filter(|c| !c.is_whitespace()).collect();
                base64::engine::general_purpose::STANDARD
                    .decode(compact)
                    .map_err(|e| HostError::Decode(e.to_string()))
            }
            Some("utf-8") => Ok(content.as_bytes().to_vec()),
            Some(other) => Err(HostError::Decode(format!("unknown blob encoding {other}"))),
        }
    }

    fn last_commit_time(
        &self,
        owner: &str,
        name: &str,
        branch: &str,
        path: &str,
    ) -> Result<Option<DateTime<Utc>>, HostError> {
        let query = format!(
            "/repos/{}/{}/commits?sha={}&path={}&per_page=1",
            encode_component(owner),
            encode_component(name),
            encode_component(branch),
            encode_path(path)
        );
        let Some(value) = self.get_json(&query)? else {
            return Ok(None);
        };
        Ok(value
            .get(0)
            .and_then(|c| c.pointer("/commit/committer/date"))
            .and_then(Value::as_str)
            .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
            .map(|d| d.with_timezone(&Utc)))
    }
}
