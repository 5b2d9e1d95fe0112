//! On-disk response cache and the shared key layout used by fixtures.
//!
//! An entry for key `(kind, owner/name, id)` lives at
//! `<root>/<kind>/<owner>/<name>/<id>.json`, holding the raw response body
//! byte for byte, with a `<id>.meta.json` sidecar for status and fetch time.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::MinerError;
use crate::corpus::split_repo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    ReviewComments,
    ClosedPulls,
}

impl EndpointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EndpointKind::ReviewComments => "review_comments",
            EndpointKind::ClosedPulls => "closed_pulls",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub kind: EndpointKind,
    pub repo: String,
    pub identifier: String,
}

impl CacheKey {
    pub fn new(kind: EndpointKind, repo: &str, identifier: impl Into<String>) -> Self {
        Self {
            kind,
            repo: repo.to_owned(),
            identifier: identifier.into(),
        }
    }

    /// Relative path of the body file.
    pub fn relative_path(&self) -> Result<PathBuf, MinerError> {
        let (owner, name) = split_repo(&self.repo).ok_or_else(|| MinerError::BadRepo(self.repo.clone()))?;
        let safe = |s: &str| !s.is_empty() && s != "." && s != ".." && !s.contains(['/', '\\']);
        if !safe(owner) || !safe(name) || !safe(&self.identifier) {
            return Err(MinerError::BadRepo(format!("{}:{}", self.repo, self.identifier)));
        }
        Ok(PathBuf::from(self.kind.as_str())
            .join(owner)
            .join(name)
            .join(format!("{}.json", self.identifier)))
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind.as_str(), self.repo, self.identifier)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub status: u16,
    pub body: Vec<u8>,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    status: u16,
    fetched_at: DateTime<Utc>,
}

/// Entries never expire; use [`ResponseCache::invalidate`] to drop them.
#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    // Concurrent readers, one writer at a time.
    lock: RwLock<()>,
}

fn meta_path(body: &Path) -> PathBuf {
    body.with_extension("meta.json")
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, MinerError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            lock: RwLock::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, MinerError> {
        let _guard = self.lock.read().unwrap();
        let body_path = self.root.join(key.relative_path()?);
        let meta_raw = match fs::read(meta_path(&body_path)) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let meta: Meta = serde_json::from_slice(&meta_raw).map_err(|e| MinerError::Decode(e.to_string()))?;
        let body = fs::read(&body_path)?;
        Ok(Some(CacheEntry {
            key: key.clone(),
            status: meta.status,
            body,
            fetched_at: meta.fetched_at,
        }))
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), MinerError> {
        let _guard = self.lock.write().unwrap();
        let body_path = self.root.join(entry.key.relative_path()?);
        let dir = body_path.parent().expect("key paths have a parent");
        fs::create_dir_all(dir)?;
        write_atomic(&body_path, &entry.body)?;
        let meta = serde_json::to_vec(&Meta {
            status: entry.status,
            fetched_at: entry.fetched_at,
        })
        .expect("meta serializes");
        // Meta last: an entry is visible only once both files exist.
        write_atomic(&meta_path(&body_path), &meta)?;
        Ok(())
    }

    pub fn invalidate(&self, key: &CacheKey) -> Result<bool, MinerError> {
        let _guard = self.lock.write().unwrap();
        let body_path = self.root.join(key.relative_path()?);
        let existed = remove_if_exists(&meta_path(&body_path))?;
        remove_if_exists(&body_path)?;
        Ok(existed)
    }

    /// Drops every entry for `repo`, or the whole cache when `repo` is `None`.
    pub fn invalidate_all(&self, repo: Option<&str>) -> Result<(), MinerError> {
        let _guard = self.lock.write().unwrap();
        match repo {
            None => {
                for kind in [EndpointKind::ReviewComments, EndpointKind::ClosedPulls] {
                    remove_dir_if_exists(&self.root.join(kind.as_str()))?;
                }
            }
            Some(repo) => {
                let (owner, name) = split_repo(repo).ok_or_else(|| MinerError::BadRepo(repo.to_owned()))?;
                for kind in [EndpointKind::ReviewComments, EndpointKind::ClosedPulls] {
                    remove_dir_if_exists(&self.root.join(kind.as_str()).join(owner).join(name))?;
                }
            }
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(tmp, path)
}

fn remove_if_exists(path: &Path) -> std::io::Result<bool> {
    match fs::remove_file(path) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(e),
    }
}

fn remove_dir_if_exists(path: &Path) -> std::io::Result<()> {
    match fs::remove_dir_all(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}
