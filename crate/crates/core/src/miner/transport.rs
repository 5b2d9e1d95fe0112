//! Pluggable request transports: live HTTPS and recorded-fixture playback.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use chrono::{DateTime, Utc};

use super::budget::RateInfo;
use super::cache::CacheKey;

pub const GITHUB_API: &str = "https://api.github.com";
pub const TOKEN_ENV: &str = "GITHUB_TOKEN";

/// One GET request. `key` names the response for caching and fixtures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiRequest {
    pub key: CacheKey,
    /// Path and query relative to the API root, e.g. `/repos/o/r/pulls/1/comments?page=1`.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Vec<u8>,
    pub rate: Option<RateInfo>,
    pub retry_after: Option<Duration>,
}

impl ApiResponse {
    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        Self {
            status: 200,
            body: body.into(),
            rate: None,
            retry_after: None,
        }
    }

    pub fn not_found() -> Self {
        Self {
            status: 404,
            body: br#"{"message":"Not Found"}"#.to_vec(),
            rate: None,
            retry_after: None,
        }
    }

    pub fn is_rate_limited(&self) -> bool {
        matches!(self.status, 403 | 429) && (self.retry_after.is_some() || self.rate.is_some_and(|r| r.remaining == 0))
    }
}

/// Connection-level failure; HTTP error statuses are responses, not errors.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn send(&self, request: &ApiRequest) -> Result<ApiResponse, TransportError>;
}

/// Serves raw bodies from a directory laid out like the response cache;
/// a missing file plays back as 404.
#[derive(Debug)]
pub struct FixtureTransport {
    root: PathBuf,
    requests: AtomicUsize,
}

impl FixtureTransport {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Transport for FixtureTransport {
    fn send(&self, request: &ApiRequest) -> Result<ApiResponse, TransportError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let rel = request.key.relative_path().map_err(|e| TransportError(e.to_string()))?;
        match std::fs::read(self.root.join(rel)) {
            Ok(body) => Ok(ApiResponse::ok(body)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ApiResponse::not_found()),
            Err(e) => Err(TransportError(e.to_string())),
        }
    }
}

/// Live REST transport. The token comes from `GITHUB_TOKEN` only.
pub struct HttpTransport {
    agent: ureq::Agent,
    base_url: String,
    token: String,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("base_url", &self.base_url)
            .finish_non_exhaustive()
    }
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, token: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            token: token.into(),
        }
    }

    /// Reads the token from the environment; `None` when unset or empty.
    pub fn from_env() -> Option<Self> {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.trim().is_empty())?;
        Some(Self::new(GITHUB_API, token.trim()))
    }
}

fn header<'a>(headers: &'a ureq::http::HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok())
}

pub(crate) fn parse_rate_headers(remaining: Option<&str>, reset: Option<&str>) -> Option<RateInfo> {
    let remaining = remaining?.trim().parse().ok()?;
    let reset_secs: i64 = reset?.trim().parse().ok()?;
    Some(RateInfo {
        remaining,
        reset_at: DateTime::<Utc>::from_timestamp(reset_secs, 0)?,
    })
}

impl Transport for HttpTransport {
    fn send(&self, request: &ApiRequest) -> Result<ApiResponse, TransportError> {
        let url = format!("{}{}", self.base_url, request.path);
        let mut response = self
            .agent
            .get(&url)
            .header("Accept", "application/vnd.github+json")
            .header("Authorization", &format!("Bearer {}", self.token))
            .header("User-Agent", concat!("revcorpus/", env!("CARGO_PKG_VERSION")))
            .header("X-GitHub-Api-Version", "2022-11-28")
            .call()
            .map_err(|e| TransportError(format!("GET {url}: {e}")))?;
        let status = response.status().as_u16();
        let headers = response.headers();
        let rate = parse_rate_headers(
            header(headers, "x-ratelimit-remaining"),
            header(headers, "x-ratelimit-reset"),
        );
        let retry_after = header(headers, "retry-after")
            .and_then(|v| v.trim().parse().ok())
            .map(Duration::from_secs);
        let body = response
            .body_mut()
            .read_to_vec()
            .map_err(|e| TransportError(format!("GET {url}: reading body: {e}")))?;
        Ok(ApiResponse {
            status,
            body,
            rate,
            retry_after,
        })
    }
}
