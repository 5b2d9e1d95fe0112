//! Review metadata and ownership events from a forge REST API.
//!
//! Every request goes through [`GithubClient`], which consults the
//! [`ResponseCache`] first, then waits on the [`RateBudget`] before handing
//! the request to a [`Transport`]. [`FixtureTransport`] replays recorded
//! bodies so the whole pipeline runs offline.

mod budget;
mod cache;
mod history;
mod matching;
mod transport;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use budget::{BudgetSnapshot, Clock, ManualClock, Permit, RateBudget, RateInfo, SystemClock};
pub use cache::{CacheEntry, CacheKey, EndpointKind, ResponseCache};
pub use history::{
    count_commits, count_prs, AuthorIdentity, Commit, CommitAuthor, CommitHistory, PrParticipation, PullRecord,
};
pub use matching::{match_review_comment, AmbiguousMatch, CandidateComment};
pub use transport::{
    ApiRequest, ApiResponse, FixtureTransport, HttpTransport, Transport, TransportError, GITHUB_API, TOKEN_ENV,
};

use crate::corpus::{canonical_time, parse_time, split_repo};

#[derive(Debug, thiserror::Error)]
pub enum MinerError {
    #[error("network failure after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: TransportError },
    #[error("gave up after {attempts} attempts: {reason}")]
    RetriesExhausted { attempts: u32, reason: String },
    #[error("GET {path} returned HTTP {status}")]
    Http { status: u16, path: String },
    #[error("{repo}#{pr_id}: {source}")]
    Ambiguous {
        repo: String,
        pr_id: u64,
        #[source]
        source: AmbiguousMatch,
    },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("invalid repository name {0:?}")]
    BadRepo(String),
    #[error("git: {0}")]
    Git(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MinerError {
    pub fn is_network(&self) -> bool {
        matches!(self, MinerError::Transport { .. } | MinerError::RetriesExhausted { .. })
    }
}

/// Outcome of looking up one dataset comment on the forge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FetchResult {
    Found {
        reviewer: String,
        created_at: DateTime<Utc>,
    },
    Deleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_delay)
    }
}

const PER_PAGE: usize = 100;
const MAX_PAGES: u32 = 1000;

#[derive(Deserialize)]
struct RawUser {
    login: String,
}

#[derive(Deserialize)]
struct RawComment {
    id: u64,
    #[serde(default)]
    body: Option<String>,
    #[serde(default)]
    user: Option<RawUser>,
    created_at: String,
}

#[derive(Deserialize)]
struct RawPull {
    number: u64,
    created_at: String,
}

fn decode<T: serde::de::DeserializeOwned>(body: &[u8], what: &str) -> Result<T, MinerError> {
    serde_json::from_slice(body).map_err(|e| MinerError::Decode(format!("{what}: {e}")))
}

fn decode_time(raw: &str) -> Result<DateTime<Utc>, MinerError> {
    parse_time(raw).map_err(|e| MinerError::Decode(format!("timestamp {raw:?}: {e}")))
}

pub struct GithubClient {
    transport: Arc<dyn Transport>,
    budget: Arc<RateBudget>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
}

impl GithubClient {
    pub fn new(transport: Arc<dyn Transport>, budget: Arc<RateBudget>, cache: Option<ResponseCache>) -> Self {
        Self {
            transport,
            budget,
            cache,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn budget(&self) -> &Arc<RateBudget> {
        &self.budget
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    fn send_with_retry(&self, request: &ApiRequest) -> Result<ApiResponse, MinerError> {
        let clock = self.budget.clock().clone();
        let mut last_failure = None;
        for attempt in 0..=self.retry.max_retries {
            let permit = self.budget.acquire();
            let outcome = self.transport.send(request);
            match outcome {
                Ok(response) => {
                    permit.record(response.rate);
                    drop(permit);
                    if response.is_rate_limited() {
                        let now = clock.now();
                        let reset = match (response.retry_after, response.rate) {
                            (Some(after), _) => now + chrono::Duration::from_std(after).unwrap_or_default(),
                            (None, Some(rate)) => rate.reset_at,
                            (None, None) => now,
                        };
                        // Never retry before the advertised reset, and back off on top of it.
                        let backoff = chrono::Duration::from_std(self.retry.delay(attempt)).unwrap_or_default();
                        self.budget.exhaust_until(reset.max(now) + backoff);
                        last_failure = Some(format!("rate limited (HTTP {})", response.status));
                        continue;
                    }
                    if response.status >= 500 {
                        last_failure = Some(format!("HTTP {}", response.status));
                        clock.sleep(self.retry.delay(attempt));
                        continue;
                    }
                    return Ok(response);
                }
                Err(e) => {
                    drop(permit);
                    log::warn!("{} attempt {}: {e}", request.path, attempt + 1);
                    if attempt == self.retry.max_retries {
                        return Err(MinerError::Transport {
                            attempts: attempt + 1,
                            last: e,
                        });
                    }
                    clock.sleep(self.retry.delay(attempt));
                }
            }
        }
        Err(MinerError::RetriesExhausted {
            attempts: self.retry.max_retries + 1,
            reason: last_failure.unwrap_or_default(),
        })
    }

    /// Cached GET. Only 200 and 404 are returned; other statuses are errors.
    fn get(&self, request: &ApiRequest) -> Result<(u16, Vec<u8>), MinerError> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&request.key)? {
                return Ok((hit.status, hit.body));
            }
        }
        let response = self.send_with_retry(request)?;
        if response.status != 200 && response.status != 404 {
            return Err(MinerError::Http {
                status: response.status,
                path: request.path.clone(),
            });
        }
        if let Some(cache) = &self.cache {
            cache.put(&CacheEntry {
                key: request.key.clone(),
                status: response.status,
                body: response.body.clone(),
                fetched_at: canonical_time(self.budget.clock().now()),
            })?;
        }
        Ok((response.status, response.body))
    }

    fn check_repo(repo: &str) -> Result<(), MinerError> {
        split_repo(repo)
            .map(|_| ())
            .ok_or_else(|| MinerError::BadRepo(repo.to_owned()))
    }

    /// All review comments on a pull request, or `None` if the PR is gone.
    pub fn fetch_review_comments(&self, repo: &str, pr_id: u64) -> Result<Option<Vec<CandidateComment>>, MinerError> {
        Self::check_repo(repo)?;
        let mut out = Vec::new();
        for page in 1..=MAX_PAGES {
            let identifier = if page == 1 {
                pr_id.to_string()
            } else {
                format!("{pr_id}.page{page}")
            };
            let request = ApiRequest {
                key: CacheKey::new(EndpointKind::ReviewComments, repo, identifier),
                path: format!("/repos/{repo}/pulls/{pr_id}/comments?per_page={PER_PAGE}&page={page}"),
            };
            let (status, body) = self.get(&request)?;
            if status == 404 {
                if page == 1 {
                    return Ok(None);
                }
                break;
            }
            let raw: Vec<RawComment> = decode(&body, "review comments")?;
            let n = raw.len();
            for c in raw {
                out.push(CandidateComment {
                    comment_id: c.id,
                    body: c.body.unwrap_or_default(),
                    author: c.user.map(|u| u.login).unwrap_or_default(),
                    created_at: decode_time(&c.created_at)?,
                });
            }
            if n < PER_PAGE {
                break;
            }
        }
        Ok(Some(out))
    }

    /// Resolves the reviewer and time of the dataset comment `target_body`.
    ///
    /// A missing PR, a missing comment and a comment whose author account is
    /// gone all count as deleted.
    pub fn fetch_review_meta(&self, repo: &str, pr_id: u64, target_body: &str) -> Result<FetchResult, MinerError> {
        let Some(candidates) = self.fetch_review_comments(repo, pr_id)? else {
            return Ok(FetchResult::Deleted);
        };
        let matched = match_review_comment(&candidates, target_body).map_err(|source| MinerError::Ambiguous {
            repo: repo.to_owned(),
            pr_id,
            source,
        })?;
        Ok(match matched {
            Some(c) if !c.author.is_empty() => FetchResult::Found {
                reviewer: c.author.clone(),
                created_at: c.created_at,
            },
            _ => FetchResult::Deleted,
        })
    }

    /// Closed pull requests of `repo` with the logins that left review comments.
    pub fn fetch_participation(&self, repo: &str) -> Result<PrParticipation, MinerError> {
        Self::check_repo(repo)?;
        let mut pulls = Vec::new();
        for page in 1..=MAX_PAGES {
            let request = ApiRequest {
                key: CacheKey::new(EndpointKind::ClosedPulls, repo, format!("page{page}")),
                path: format!(
                    "/repos/{repo}/pulls?state=closed&sort=created&direction=asc&per_page={PER_PAGE}&page={page}"
                ),
            };
            let (status, body) = self.get(&request)?;
            if status == 404 {
                break;
            }
            let raw: Vec<RawPull> = decode(&body, "closed pulls")?;
            let n = raw.len();
            pulls.extend(raw);
            if n < PER_PAGE {
                break;
            }
        }
        let mut records = Vec::with_capacity(pulls.len());
        for pull in pulls {
            let participants: BTreeSet<String> = self
                .fetch_review_comments(repo, pull.number)?
                .unwrap_or_default()
                .into_iter()
                .map(|c| c.author)
                .filter(|a| !a.is_empty())
                .collect();
            records.push(PullRecord {
                number: pull.number,
                submitted_at: decode_time(&pull.created_at)?,
                participants,
            });
        }
        Ok(PrParticipation::new(records))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use std::sync::Mutex;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    fn write_fixture(root: &std::path::Path, rel: &str, body: &str) {
        let path = root.join(rel);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, body).unwrap();
    }

    const COMMENTS: &str = r#"[
        {"id": 11, "body": "Looks fine", "user": {"login": "bob"}, "created_at": "2020-05-01T10:00:00Z"},
        {"id": 12, "body": "Fix this\r\n", "user": {"login": "alice"}, "created_at": "2020-05-02T12:30:00+02:00"},
        {"id": 13, "body": "Gone author", "user": null, "created_at": "2020-05-03T00:00:00Z"}
    ]"#;

    fn client(root: &std::path::Path, cache: Option<ResponseCache>) -> (GithubClient, Arc<FixtureTransport>) {
        let transport = Arc::new(FixtureTransport::new(root));
        let budget = Arc::new(RateBudget::new(4, Arc::new(ManualClock::new(t0()))));
        (GithubClient::new(transport.clone(), budget, cache), transport)
    }

    #[test]
    fn found_deleted_and_cached() {
        let fixtures = tempfile::tempdir().unwrap();
        write_fixture(fixtures.path(), "review_comments/o/r/7.json", COMMENTS);
        let cache_dir = tempfile::tempdir().unwrap();
        let (client, transport) = client(fixtures.path(), Some(ResponseCache::open(cache_dir.path()).unwrap()));

        let found = client.fetch_review_meta("o/r", 7, "Fix this").unwrap();
        assert_eq!(
            found,
            FetchResult::Found {
                reviewer: "alice".into(),
                created_at: Utc.with_ymd_and_hms(2020, 5, 2, 10, 30, 0).unwrap(),
            }
        );
        assert_eq!(transport.request_count(), 1);
        let again = client.fetch_review_meta("o/r", 7, "Fix this").unwrap();
        assert_eq!(again, found);
        assert_eq!(transport.request_count(), 1, "second call must be served from cache");

        assert_eq!(client.fetch_review_meta("o/r", 404, "x").unwrap(), FetchResult::Deleted);
        assert_eq!(
            client.fetch_review_meta("o/r", 7, "not there").unwrap(),
            FetchResult::Deleted
        );
        assert_eq!(
            client.fetch_review_meta("o/r", 7, "Gone author").unwrap(),
            FetchResult::Deleted
        );
        // The 404 is cached too.
        let before = transport.request_count();
        client.fetch_review_meta("o/r", 404, "x").unwrap();
        assert_eq!(transport.request_count(), before);
    }

    #[test]
    fn ambiguity_propagates() {
        let fixtures = tempfile::tempdir().unwrap();
        write_fixture(
            fixtures.path(),
            "review_comments/o/r/1.json",
            r#"[{"id":1,"body":"a","user":{"login":"x"},"created_at":"2020-01-01T00:00:00Z"},
                {"id":2,"body":"a","user":{"login":"y"},"created_at":"2020-01-01T00:00:00Z"}]"#,
        );
        let (client, _) = client(fixtures.path(), None);
        let err = client.fetch_review_meta("o/r", 1, "a").unwrap_err();
        assert!(matches!(err, MinerError::Ambiguous { .. }), "{err}");
    }

    #[test]
    fn participation_from_fixtures() {
        let fixtures = tempfile::tempdir().unwrap();
        write_fixture(
            fixtures.path(),
            "closed_pulls/o/r/page1.json",
            r#"[{"number":1,"created_at":"2020-01-01T00:00:00Z"},{"number":2,"created_at":"2020-02-01T00:00:00Z"},{"number":3,"created_at":"2020-03-01T00:00:00Z"}]"#,
        );
        write_fixture(
            fixtures.path(),
            "review_comments/o/r/1.json",
            r#"[{"id":1,"body":"a","user":{"login":"d"},"created_at":"2020-01-02T00:00:00Z"},{"id":2,"body":"b","user":{"login":"d"},"created_at":"2020-01-02T00:00:00Z"}]"#,
        );
        write_fixture(
            fixtures.path(),
            "review_comments/o/r/2.json",
            r#"[{"id":3,"body":"a","user":{"login":"e"},"created_at":"2020-02-02T00:00:00Z"}]"#,
        );
        let (client, _) = client(fixtures.path(), None);
        let part = client.fetch_participation("o/r").unwrap();
        assert_eq!(part.pulls.len(), 3);
        assert_eq!(part.reviewed().count(), 2);
        assert_eq!(
            count_prs(&part, "d", Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap()),
            (1, 2)
        );
    }

    /// Transport scripted with responses that records when each request arrives.
    struct Scripted {
        clock: Arc<ManualClock>,
        script: Mutex<Vec<Result<ApiResponse, TransportError>>>,
        calls: Mutex<Vec<DateTime<Utc>>>,
        forbidden_until: Mutex<Option<DateTime<Utc>>>,
    }

    impl Transport for Scripted {
        fn send(&self, _: &ApiRequest) -> Result<ApiResponse, TransportError> {
            let now = self.clock.now();
            if let Some(until) = *self.forbidden_until.lock().unwrap() {
                assert!(
                    now >= until,
                    "request issued at {now} while budget was exhausted until {until}"
                );
            }
            self.calls.lock().unwrap().push(now);
            let next = self.script.lock().unwrap().remove(0);
            if let Ok(r) = &next {
                if let Some(rate) = r.rate.filter(|r| r.remaining == 0) {
                    *self.forbidden_until.lock().unwrap() = Some(rate.reset_at);
                }
            }
            next
        }
    }

    fn scripted(script: Vec<Result<ApiResponse, TransportError>>) -> (GithubClient, Arc<Scripted>, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(t0()));
        let transport = Arc::new(Scripted {
            clock: clock.clone(),
            script: Mutex::new(script),
            calls: Mutex::new(Vec::new()),
            forbidden_until: Mutex::new(None),
        });
        let budget = Arc::new(RateBudget::new(1, clock.clone()));
        let client = GithubClient::new(transport.clone(), budget, None).with_retry(RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(30),
        });
        (client, transport, clock)
    }

    fn with_rate(mut r: ApiResponse, remaining: u64, reset: DateTime<Utc>) -> ApiResponse {
        r.rate = Some(RateInfo {
            remaining,
            reset_at: reset,
        });
        r
    }

    #[test]
    fn waits_for_reset_after_rate_limit() {
        let reset = t0() + chrono::Duration::seconds(120);
        let limited = ApiResponse {
            status: 403,
            body: b"{}".to_vec(),
            rate: Some(RateInfo {
                remaining: 0,
                reset_at: reset,
            }),
            retry_after: None,
        };
        let (client, transport, _) = scripted(vec![Ok(limited), Ok(with_rate(ApiResponse::ok("[]"), 4999, reset))]);
        let comments = client.fetch_review_comments("o/r", 1).unwrap().unwrap();
        assert!(comments.is_empty());
        let calls = transport.calls.lock().unwrap();
        assert_eq!(calls.len(), 2);
        assert!(calls[1] >= reset);
    }

    #[test]
    fn never_requests_while_quota_is_zero() {
        let reset = t0() + chrono::Duration::seconds(60);
        // Last request of the window succeeds but reports zero remaining.
        let (client, transport, _) = scripted(vec![
            Ok(with_rate(ApiResponse::ok("[]"), 0, reset)),
            Ok(with_rate(
                ApiResponse::ok("[]"),
                10,
                reset + chrono::Duration::seconds(3600),
            )),
        ]);
        client.fetch_review_comments("o/r", 1).unwrap();
        client.fetch_review_comments("o/r", 2).unwrap();
        let calls = transport.calls.lock().unwrap();
        assert!(calls[1] >= reset);
    }

    #[test]
    fn network_failure_after_retries() {
        let fail = || Err(TransportError("connection reset".into()));
        let (client, transport, clock) = scripted(vec![fail(), fail(), fail(), fail()]);
        let err = client.fetch_review_comments("o/r", 1).unwrap_err();
        assert!(matches!(err, MinerError::Transport { attempts: 4, .. }), "{err}");
        assert!(err.is_network());
        assert_eq!(transport.calls.lock().unwrap().len(), 4);
        // Backoff 1s + 2s + 4s between the four attempts.
        assert_eq!(clock.now() - t0(), chrono::Duration::seconds(7));
    }

    #[test]
    fn recovers_from_transient_errors() {
        let server_error = ApiResponse {
            status: 502,
            body: Vec::new(),
            rate: None,
            retry_after: None,
        };
        let (client, _, _) = scripted(vec![
            Err(TransportError("timeout".into())),
            Ok(server_error),
            Ok(ApiResponse::ok(
                r#"[{"id":5,"body":"ok","user":{"login":"z"},"created_at":"2020-01-01T00:00:00Z"}]"#,
            )),
        ]);
        let result = client.fetch_review_meta("o/r", 1, "ok").unwrap();
        assert!(matches!(result, FetchResult::Found { ref reviewer, .. } if reviewer == "z"));
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let unauthorized = ApiResponse {
            status: 401,
            body: Vec::new(),
            rate: None,
            retry_after: None,
        };
        let (client, transport, _) = scripted(vec![Ok(unauthorized)]);
        let err = client.fetch_review_comments("o/r", 1).unwrap_err();
        assert!(matches!(err, MinerError::Http { status: 401, .. }));
        assert_eq!(transport.calls.lock().unwrap().len(), 1);
    }

    #[test]
    fn fixture_fetches_are_deterministic() {
        let fixtures = tempfile::tempdir().unwrap();
        write_fixture(fixtures.path(), "review_comments/o/r/7.json", COMMENTS);
        let run = || {
            let (client, _) = client(fixtures.path(), None);
            ["Looks fine", "Fix this", "nope"]
                .iter()
                .map(|b| client.fetch_review_meta("o/r", 7, b).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
