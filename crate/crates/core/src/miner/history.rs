//! Raw commit and pull-request events behind the ownership metrics, and
//! the time-cut counts over them.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::MinerError;
use crate::corpus::parse_time;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitAuthor {
    /// Forge login, when it can be resolved from the commit metadata.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub login: Option<String>,
    pub name: String,
    pub email: String,
}

impl CommitAuthor {
    /// Builds an author, resolving the login from a forge no-reply address
    /// (`12345+login@users.noreply.github.com` or `login@users.noreply.github.com`).
    pub fn from_name_email(name: &str, email: &str) -> Self {
        let login = email
            .strip_suffix("@users.noreply.github.com")
            .map(|local| local.rsplit_once('+').map_or(local, |(_, l)| l).to_owned())
            .filter(|l| !l.is_empty());
        Self {
            login,
            name: name.to_owned(),
            email: email.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub author: CommitAuthor,
    pub time: DateTime<Utc>,
}

/// Commits of one repository, ordered by time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommitHistory {
    commits: Vec<Commit>,
}

impl CommitHistory {
    pub fn new(mut commits: Vec<Commit>) -> Self {
        commits.sort_by_key(|c| c.time);
        Self { commits }
    }

    pub fn commits(&self) -> &[Commit] {
        &self.commits
    }

    pub fn len(&self) -> usize {
        self.commits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commits.is_empty()
    }

    /// Loads a JSON array of `{"login"?, "name", "email", "time"}` objects.
    pub fn from_json(text: &str) -> Result<Self, MinerError> {
        #[derive(Deserialize)]
        struct Row {
            #[serde(default)]
            login: Option<String>,
            #[serde(default)]
            name: String,
            #[serde(default)]
            email: String,
            time: String,
        }
        let rows: Vec<Row> = serde_json::from_str(text).map_err(|e| MinerError::Decode(e.to_string()))?;
        let mut commits = Vec::with_capacity(rows.len());
        for row in rows {
            let time = parse_time(&row.time).map_err(|e| MinerError::Decode(format!("commit time: {e}")))?;
            let mut author = CommitAuthor::from_name_email(&row.name, &row.email);
            if row.login.is_some() {
                author.login = row.login;
            }
            commits.push(Commit { author, time });
        }
        Ok(Self::new(commits))
    }

    /// Reads the history of a local clone with `git log`.
    pub fn from_git(repo_path: &Path) -> Result<Self, MinerError> {
        let output = Command::new("git")
            .arg("-C")
            .arg(repo_path)
            .args(["log", "--format=%an%x1f%ae%x1f%aI"])
            .output()
            .map_err(|e| MinerError::Git(format!("{}: {e}", repo_path.display())))?;
        if !output.status.success() {
            return Err(MinerError::Git(format!(
                "{}: {}",
                repo_path.display(),
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Self::parse_git_log(&String::from_utf8_lossy(&output.stdout))
    }

    /// Parses `git log --format=%an%x1f%ae%x1f%aI` output.
    pub fn parse_git_log(text: &str) -> Result<Self, MinerError> {
        let mut commits = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split('\u{1f}');
            let (Some(name), Some(email), Some(time)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(MinerError::Decode(format!("bad git log line {line:?}")));
            };
            let time = parse_time(time.trim()).map_err(|e| MinerError::Decode(format!("commit time: {e}")))?;
            commits.push(Commit {
                author: CommitAuthor::from_name_email(name, email),
                time,
            });
        }
        Ok(Self::new(commits))
    }
}

/// Who a reviewer is in commit metadata: their login, plus any known
/// `(name, email)` pairs used when a commit carries no login.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuthorIdentity {
    pub login: String,
    pub aliases: Vec<(String, String)>,
}

impl AuthorIdentity {
    pub fn login(login: &str) -> Self {
        Self {
            login: login.to_owned(),
            aliases: Vec::new(),
        }
    }

    pub fn matches(&self, author: &CommitAuthor) -> bool {
        match &author.login {
            Some(login) => login.eq_ignore_ascii_case(&self.login),
            None => self
                .aliases
                .iter()
                .any(|(name, email)| *name == author.name && *email == author.email),
        }
    }
}

/// `(alpha, c_total)`: commits by `author`, and all commits, strictly before `cutoff`.
pub fn count_commits(history: &CommitHistory, author: &AuthorIdentity, cutoff: DateTime<Utc>) -> (u64, u64) {
    let end = history.commits.partition_point(|c| c.time < cutoff);
    let prior = &history.commits[..end];
    let alpha = prior.iter().filter(|c| author.matches(&c.author)).count();
    (alpha as u64, prior.len() as u64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PullRecord {
    pub number: u64,
    pub submitted_at: DateTime<Utc>,
    /// Logins that left at least one review comment.
    pub participants: BTreeSet<String>,
}

/// Closed pull requests of one repository with their review participants.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrParticipation {
    pub pulls: Vec<PullRecord>,
}

impl PrParticipation {
    pub fn new(mut pulls: Vec<PullRecord>) -> Self {
        pulls.sort_by_key(|p| (p.submitted_at, p.number));
        Self { pulls }
    }

    pub fn submitted_at(&self, number: u64) -> Option<DateTime<Utc>> {
        self.pulls.iter().find(|p| p.number == number).map(|p| p.submitted_at)
    }

    /// Pull requests that received at least one review comment.
    pub fn reviewed(&self) -> impl Iterator<Item = &PullRecord> {
        self.pulls.iter().filter(|p| !p.participants.is_empty())
    }
}

/// `(r, rho)`: reviewed closed PRs submitted strictly before `cutoff` that
/// `reviewer` commented on, and all of them.
pub fn count_prs(part: &PrParticipation, reviewer: &str, cutoff: DateTime<Utc>) -> (u64, u64) {
    let mut r = 0;
    let mut rho = 0;
    for pull in part.reviewed().filter(|p| p.submitted_at < cutoff) {
        rho += 1;
        if pull.participants.iter().any(|p| p.eq_ignore_ascii_case(reviewer)) {
            r += 1;
        }
    }
    (r, rho)
}
