//! Review examples and their line-delimited record format.
//!
//! One record per line, keys in alphabetical order:
//!
//! ```text
//! {"comment_id":7,"created_at":"2021-03-04T05:06:07Z","language":"py","m_post":"","m_pre":"x = 1","pr_id":1,"r_nl":"fix","repo":"a/b","reviewer":"alice","split":"train"}
//! ```
//!
//! Classified corpora carry three extra keys, `aco`, `rso` and `quadrant`,
//! which slot into the same alphabetical ordering.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::experience::{ExperienceClass, OwnershipScores};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("invalid value for field {key}: {reason}")]
    InvalidField { key: &'static str, reason: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("duplicate example {0}")]
    Duplicate(ExampleKey),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which partition of the upstream dataset an example belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSplit {
    Train,
    Validation,
    Test,
}

impl DatasetSplit {
    pub const ALL: [DatasetSplit; 3] = [DatasetSplit::Train, DatasetSplit::Validation, DatasetSplit::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetSplit::Train => "train",
            DatasetSplit::Validation => "validation",
            DatasetSplit::Test => "test",
        }
    }
}

impl fmt::Display for DatasetSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(DatasetSplit::Train),
            "validation" => Ok(DatasetSplit::Validation),
            "test" => Ok(DatasetSplit::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// `(repo, pr_id, comment_id)`: unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExampleKey {
    pub repo: String,
    pub pr_id: u64,
    pub comment_id: u64,
}

impl fmt::Display for ExampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}/{}", self.repo, self.pr_id, self.comment_id)
    }
}

/// Ownership scores and quadrant attached by the experience stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub scores: OwnershipScores,
    pub class: ExperienceClass,
}

/// One `(m_pre, r_nl, m_post)` triplet with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewExample {
    pub repo: String,
    pub pr_id: u64,
    pub comment_id: u64,
    /// Empty until the miner has resolved the comment.
    pub reviewer: String,
    pub created_at: Option<DateTime<Utc>>,
    pub m_pre: String,
    pub r_nl: String,
    pub m_post: String,
    pub language: String,
    pub split: DatasetSplit,
    pub experience: Option<Experience>,
}

impl ReviewExample {
    pub fn key(&self) -> ExampleKey {
        ExampleKey {
            repo: self.repo.clone(),
            pr_id: self.pr_id,
            comment_id: self.comment_id,
        }
    }

    pub fn is_mined(&self) -> bool {
        !self.reviewer.is_empty() && self.created_at.is_some()
    }

    /// Splits `repo` into `(owner, name)`.
    pub fn owner_and_name(&self) -> Option<(&str, &str)> {
        split_repo(&self.repo)
    }
}

pub fn split_repo(repo: &str) -> Option<(&str, &str)> {
    let (owner, name) = repo.split_once('/')?;
    if owner.is_empty() || name.is_empty() || name.contains('/') {
        return None;
    }
    Some((owner, name))
}

/// Truncates to whole seconds in UTC, the canonical timestamp precision.
pub fn canonical_time(t: DateTime<Utc>) -> DateTime<Utc> {
    t.trunc_subsecs(0)
}

pub fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parses any RFC 3339 timestamp and normalizes it to UTC seconds.
pub fn parse_time(s: &str) -> Result<DateTime<Utc>, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s).map(|t| canonical_time(t.with_timezone(&Utc)))
}

// Field order is the canonical (alphabetical) key order.
#[derive(Serialize)]
struct CanonicalRecord<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    aco: Option<f64>,
    comment_id: u64,
    created_at: Option<String>,
    language: &'a str,
    m_post: &'a str,
    m_pre: &'a str,
    pr_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    quadrant: Option<&'static str>,
    r_nl: &'a str,
    repo: &'a str,
    reviewer: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    rso: Option<f64>,
    split: DatasetSplit,
}

/// Serializes an example as one canonical line (no trailing newline).
pub fn serialize_example(e: &ReviewExample) -> String {
    let record = CanonicalRecord {
        aco: e.experience.map(|x| x.scores.aco()),
        comment_id: e.comment_id,
        created_at: e.created_at.as_ref().map(format_time),
        language: &e.language,
        m_post: &e.m_post,
        m_pre: &e.m_pre,
        pr_id: e.pr_id,
        quadrant: e.experience.map(|x| x.class.code()),
        r_nl: &e.r_nl,
        repo: &e.repo,
        reviewer: &e.reviewer,
        rso: e.experience.map(|x| x.scores.rso()),
        split: e.split,
    };
    serde_json::to_string(&record).expect("record serialization is infallible")
}

fn required<'a>(map: &'a Map<String, Value>, key: &'static str) -> Result<&'a Value, CorpusError> {
    match map.get(key) {
        Some(v) => Ok(v),
        None => Err(CorpusError::MissingField(key)),
    }
}

fn as_str(v: &Value, key: &'static str) -> Result<String, CorpusError> {
    v.as_str().map(str::to_owned).ok_or_else(|| CorpusError::InvalidField {
        key,
        reason: format!("expected string, found {v}"),
    })
}

fn as_u64(v: &Value, key: &'static str) -> Result<u64, CorpusError> {
    v.as_u64().ok_or_else(|| CorpusError::InvalidField {
        key,
        reason: format!("expected non-negative integer, found {v}"),
    })
}

fn optional_str(map: &Map<String, Value>, key: &'static str) -> Result<String, CorpusError> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(v) => as_str(v, key),
    }
}

fn optional_ratio(map: &Map<String, Value>, key: &'static str) -> Result<Option<f64>, CorpusError> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_f64().map(Some).ok_or_else(|| CorpusError::InvalidField {
            key,
            reason: format!("expected number, found {v}"),
        }),
    }
}

/// Parses one record. Unknown keys are ignored.
pub fn parse_example(line: &str) -> Result<ReviewExample, CorpusError> {
    let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(CorpusError::Malformed("record is not an object".into()));
    };

    let repo = as_str(required(&map, "repo")?, "repo")?;
    if split_repo(&repo).is_none() {
        return Err(CorpusError::InvalidField {
            key: "repo",
            reason: format!("expected owner/name, found {repo:?}"),
        });
    }
    let pr_id = as_u64(required(&map, "pr_id")?, "pr_id")?;
    if pr_id == 0 {
        return Err(CorpusError::InvalidField {
            key: "pr_id",
            reason: "must be positive".into(),
        });
    }
    let comment_id = as_u64(required(&map, "comment_id")?, "comment_id")?;
    let m_pre = as_str(required(&map, "m_pre")?, "m_pre")?;
    if m_pre.is_empty() {
        return Err(CorpusError::InvalidField {
            key: "m_pre",
            reason: "must be non-empty".into(),
        });
    }
    let r_nl = as_str(required(&map, "r_nl")?, "r_nl")?;
    let split_raw = as_str(required(&map, "split")?, "split")?;
    let split = split_raw
        .parse()
        .map_err(|reason| CorpusError::InvalidField { key: "split", reason })?;

    let created_at = match map.get("created_at") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let raw = as_str(v, "created_at")?;
            Some(parse_time(&raw).map_err(|e| CorpusError::InvalidField {
                key: "created_at",
                reason: e.to_string(),
            })?)
        }
    };

    let aco = optional_ratio(&map, "aco")?;
    let rso = optional_ratio(&map, "rso")?;
    let quadrant = match map.get("quadrant") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let code = as_str(v, "quadrant")?;
            Some(
                code.parse::<ExperienceClass>()
                    .map_err(|reason| CorpusError::InvalidField {
                        key: "quadrant",
                        reason,
                    })?,
            )
        }
    };
    let experience = match (aco, rso, quadrant) {
        (None, None, None) => None,
        (Some(aco), Some(rso), Some(class)) => {
            let scores = OwnershipScores::new(aco, rso).map_err(|e| CorpusError::InvalidField {
                key: "aco",
                reason: e.to_string(),
            })?;
            Some(Experience { scores, class })
        }
        (None, _, _) => return Err(CorpusError::MissingField("aco")),
        (_, None, _) => return Err(CorpusError::MissingField("rso")),
        (_, _, None) => return Err(CorpusError::MissingField("quadrant")),
    };

    Ok(ReviewExample {
        repo,
        pr_id,
        comment_id,
        reviewer: optional_str(&map, "reviewer")?,
        created_at,
        m_pre,
        r_nl,
        m_post: optional_str(&map, "m_post")?,
        language: optional_str(&map, "language")?,
        split,
        experience,
    })
}

/// Reads a record file, rejecting duplicate keys.
pub fn read_corpus(path: &Path) -> Result<Vec<ReviewExample>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        push_line(&mut out, &mut seen, idx, &line?)?;
    }
    Ok(out)
}

/// Parses records from text already in memory, rejecting duplicate keys.
pub fn parse_corpus(text: &str) -> Result<Vec<ReviewExample>, CorpusError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        push_line(&mut out, &mut seen, idx, line)?;
    }
    Ok(out)
}

fn push_line(
    out: &mut Vec<ReviewExample>,
    seen: &mut std::collections::HashSet<ExampleKey>,
    idx: usize,
    line: &str,
) -> Result<(), CorpusError> {
    if line.trim().is_empty() {
        return Ok(());
    }
    let example = parse_example(line).map_err(|e| CorpusError::AtLine {
        line: idx + 1,
        source: Box::new(e),
    })?;
    if !seen.insert(example.key()) {
        return Err(CorpusError::Duplicate(example.key()));
    }
    out.push(example);
    Ok(())
}

/// Renders records as newline-terminated lines.
pub fn render_corpus<'a>(examples: impl IntoIterator<Item = &'a ReviewExample>) -> Vec<u8> {
    let mut buf = Vec::new();
    for e in examples {
        buf.extend_from_slice(serialize_example(e).as_bytes());
        buf.push(b'\n');
    }
    buf
}

pub fn write_corpus<'a>(path: &Path, examples: impl IntoIterator<Item = &'a ReviewExample>) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&render_corpus(examples))?;
    w.flush()?;
    Ok(())
}
