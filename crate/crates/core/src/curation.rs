//! Noise filters for mined review comments and the removal ledger.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use crate::corpus::{DatasetSplit, ExampleKey, ReviewExample};
use crate::miner::FetchResult;

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("no fetch result for example {0}")]
    MissingFetchResult(ExampleKey),
    #[error("bot registry {path}: {source}")]
    Registry {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Known bot accounts plus the username suffix rules.
///
/// File format: one username per line, `#` starts a comment, and a leading
/// `!` puts a username on the allow-list so that no rule flags it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BotRegistry {
    known: HashSet<String>,
    allowed: HashSet<String>,
}

impl BotRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Self {
        let mut registry = Self::new();
        for line in text.lines() {
            let line = match line.split_once('#') {
                Some((before, _)) => before,
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            match line.strip_prefix('!') {
                Some(name) => registry.allow(name.trim()),
                None => registry.insert(line),
            }
        }
        registry
    }

    pub fn load(path: &Path) -> Result<Self, CurationError> {
        std::fs::read_to_string(path)
            .map(|text| Self::parse(&text))
            .map_err(|source| CurationError::Registry {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn insert(&mut self, username: &str) {
        self.known.insert(username.to_lowercase());
    }

    pub fn allow(&mut self, username: &str) {
        self.allowed.insert(username.to_lowercase());
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }
}

/// Bots shipped with the tool. Replace with `--bots FILE` to use another list.
pub const DEFAULT_BOT_LIST: &str = include_str!("../data/bots.txt");

pub fn is_bot(username: &str, registry: &BotRegistry) -> bool {
    let name = username.to_lowercase();
    if registry.allowed.contains(&name) {
        return false;
    }
    name.ends_with("bot") || name.ends_with("[bot]") || registry.known.contains(&name)
}

static FENCED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```.*?(?:```|\z)").unwrap());
static INLINE_CODE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"`[^`]*`").unwrap());
static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap());

/// True when something alphabetic survives once code blocks, inline code
/// and URLs are stripped.
pub fn has_natural_language(r_nl: &str) -> bool {
    let text = FENCED.replace_all(r_nl, " ");
    let text = INLINE_CODE.replace_all(&text, " ");
    let text = URL.replace_all(&text, " ");
    text.chars().any(char::is_alphabetic)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitLedger {
    pub original: u64,
    pub deleted: u64,
    pub bots: u64,
    pub code_only: u64,
    pub final_size: u64,
}

impl SplitLedger {
    pub fn from_counts(original: u64, deleted: u64, bots: u64, code_only: u64, final_size: u64) -> Self {
        Self {
            original,
            deleted,
            bots,
            code_only,
            final_size,
        }
    }

    pub fn is_balanced(&self) -> bool {
        self.original == self.final_size + self.deleted + self.bots + self.code_only
    }

    fn merge(&mut self, other: &SplitLedger) {
        self.original += other.original;
        self.deleted += other.deleted;
        self.bots += other.bots;
        self.code_only += other.code_only;
        self.final_size += other.final_size;
    }
}

/// Reviewer and bot account census for one split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AccountCensus {
    pub reviewers: BTreeSet<String>,
    pub bots: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CurationLedger {
    pub splits: BTreeMap<DatasetSplit, SplitLedger>,
    pub accounts: BTreeMap<DatasetSplit, AccountCensus>,
}

impl CurationLedger {
    pub fn is_balanced(&self) -> bool {
        self.splits.values().all(SplitLedger::is_balanced)
    }

    /// Combines ledgers of disjoint example partitions.
    pub fn merge(&mut self, other: &CurationLedger) {
        for (split, l) in &other.splits {
            self.splits.entry(*split).or_default().merge(l);
        }
        for (split, a) in &other.accounts {
            let mine = self.accounts.entry(*split).or_default();
            mine.reviewers.extend(a.reviewers.iter().cloned());
            mine.bots.extend(a.bots.iter().cloned());
        }
    }

    /// `split,original,deleted,bots,code_only,final`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,original,deleted,bots,code_only,final\n");
        for (split, l) in &self.splits {
            out.push_str(&format!(
                "{split},{},{},{},{},{}\n",
                l.original, l.deleted, l.bots, l.code_only, l.final_size
            ));
        }
        out
    }

    /// `split,reviewer_accounts,bot_accounts`
    pub fn accounts_csv(&self) -> String {
        let mut out = String::from("split,reviewer_accounts,bot_accounts\n");
        for (split, a) in &self.accounts {
            out.push_str(&format!("{split},{},{}\n", a.reviewers.len(), a.bots.len()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Removal {
    Deleted,
    Bot,
    CodeOnly,
}

/// Drops deleted, bot-authored and code-only comments, in that precedence,
/// and fills `reviewer`/`created_at` on the survivors.
pub fn curate(
    examples: &[ReviewExample],
    fetch_results: &HashMap<ExampleKey, FetchResult>,
    registry: &BotRegistry,
) -> Result<(Vec<ReviewExample>, CurationLedger), CurationError> {
    let mut kept = Vec::with_capacity(examples.len());
    let mut ledger = CurationLedger::default();
    for e in examples {
        ledger.accounts.entry(e.split).or_default();
        let key = e.key();
        let fetched = fetch_results
            .get(&key)
            .ok_or_else(|| CurationError::MissingFetchResult(key.clone()))?;
        let entry = ledger.splits.entry(e.split).or_default();
        entry.original += 1;

        let removal = match fetched {
            FetchResult::Deleted => Some(Removal::Deleted),
            FetchResult::Found { reviewer, .. } if is_bot(reviewer, registry) => Some(Removal::Bot),
            FetchResult::Found { .. } if !has_natural_language(&e.r_nl) => Some(Removal::CodeOnly),
            FetchResult::Found { .. } => None,
        };
        match (removal, fetched) {
            (Some(Removal::Deleted), _) => entry.deleted += 1,
            (Some(Removal::Bot), FetchResult::Found { reviewer, .. }) => {
                entry.bots += 1;
                ledger.accounts.get_mut(&e.split).unwrap().bots.insert(reviewer.clone());
            }
            (Some(Removal::CodeOnly), _) => entry.code_only += 1,
            (None, FetchResult::Found { reviewer, created_at }) => {
                entry.final_size += 1;
                ledger
                    .accounts
                    .get_mut(&e.split)
                    .unwrap()
                    .reviewers
                    .insert(reviewer.clone());
                let mut out = e.clone();
                out.reviewer = reviewer.clone();
                out.created_at = Some(*created_at);
                kept.push(out);
            }
            (_, FetchResult::Deleted) => unreachable!("deleted results always map to Removal::Deleted"),
        }
    }
    debug_assert!(ledger.is_balanced());
    Ok((kept, ledger))
}
