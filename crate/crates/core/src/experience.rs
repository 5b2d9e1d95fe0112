//! Repository-level ownership scores and reviewer experience quadrants.
//!
//! Authoring code ownership (ACO) is the share of a repository's prior
//! commits authored by the reviewer. Review-specific ownership (RSO) is the
//! share of the repository's prior closed, reviewed pull requests the
//! reviewer commented on. Each axis is "major" at or above the threshold
//! (5% by default) and "minor" below it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use chrono::{DateTime, Utc};

use crate::corpus::{DatasetSplit, Experience, ReviewExample};
use crate::miner::{count_commits, count_prs, AuthorIdentity, CommitHistory, PrParticipation};

pub const DEFAULT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperienceError {
    #[error("numerator {numerator} exceeds denominator {denominator}")]
    NumeratorExceedsTotal { numerator: u64, denominator: u64 },
    #[error("ownership score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("split {0} has no examples")]
    EmptySplit(DatasetSplit),
    #[error("example {0} has not been classified")]
    Unclassified(String),
    #[error("example {0} has no reviewer or timestamp; mine it first")]
    Unmined(String),
    #[error("no commit history or pull request data for {0}")]
    MissingActivity(String),
}

/// ACO and RSO for one reviewer in one repository at one point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OwnershipScores {
    aco: f64,
    rso: f64,
}

impl OwnershipScores {
    pub fn new(aco: f64, rso: f64) -> Result<Self, ExperienceError> {
        for v in [aco, rso] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ExperienceError::OutOfRange(v));
            }
        }
        Ok(Self { aco, rso })
    }

    pub fn aco(&self) -> f64 {
        self.aco
    }

    pub fn rso(&self) -> f64 {
        self.rso
    }
}

fn ratio(numerator: u64, denominator: u64) -> Result<f64, ExperienceError> {
    if numerator > denominator {
        return Err(ExperienceError::NumeratorExceedsTotal { numerator, denominator });
    }
    if denominator == 0 {
        return Ok(0.0);
    }
    Ok(numerator as f64 / denominator as f64)
}

/// `alpha / c_total`; a repository without prior commits scores 0.
pub fn compute_aco(alpha: u64, c_total: u64) -> Result<f64, ExperienceError> {
    ratio(alpha, c_total)
}

/// `r / rho`; a repository without prior closed reviews scores 0.
pub fn compute_rso(r: u64, rho: u64) -> Result<f64, ExperienceError> {
    ratio(r, rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Major,
    Minor,
}

/// One of the four author/reviewer quadrants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExperienceClass {
    pub author: Level,
    pub reviewer: Level,
}

impl ExperienceClass {
    pub const MAJOR_REVIEWER_MAJOR_AUTHOR: Self = Self {
        author: Level::Major,
        reviewer: Level::Major,
    };
    pub const MAJOR_REVIEWER_MINOR_AUTHOR: Self = Self {
        author: Level::Minor,
        reviewer: Level::Major,
    };
    pub const MINOR_REVIEWER_MAJOR_AUTHOR: Self = Self {
        author: Level::Major,
        reviewer: Level::Minor,
    };
    pub const MINOR_REVIEWER_MINOR_AUTHOR: Self = Self {
        author: Level::Minor,
        reviewer: Level::Minor,
    };

    /// Table order: major reviewer column first, major author row first.
    pub const ALL: [Self; 4] = [
        Self::MAJOR_REVIEWER_MAJOR_AUTHOR,
        Self::MAJOR_REVIEWER_MINOR_AUTHOR,
        Self::MINOR_REVIEWER_MAJOR_AUTHOR,
        Self::MINOR_REVIEWER_MINOR_AUTHOR,
    ];

    pub fn is_major_author(&self) -> bool {
        self.author == Level::Major
    }

    pub fn is_major_reviewer(&self) -> bool {
        self.reviewer == Level::Major
    }

    pub fn code(&self) -> &'static str {
        match (self.reviewer, self.author) {
            (Level::Major, Level::Major) => "major_reviewer_major_author",
            (Level::Major, Level::Minor) => "major_reviewer_minor_author",
            (Level::Minor, Level::Major) => "minor_reviewer_major_author",
            (Level::Minor, Level::Minor) => "minor_reviewer_minor_author",
        }
    }
}

impl fmt::Display for ExperienceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ExperienceClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.code() == s)
            .ok_or_else(|| format!("unknown quadrant {s:?}"))
    }
}

/// Both comparisons are inclusive: a score equal to the threshold is major.
pub fn classify(scores: OwnershipScores, threshold: f64) -> ExperienceClass {
    let level = |v: f64| if v >= threshold { Level::Major } else { Level::Minor };
    ExperienceClass {
        author: level(scores.aco),
        reviewer: level(scores.rso),
    }
}

/// Oversampling target: which experienced reviewers get replicated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetClass {
    /// Major reviewers who are also major authors.
    Mrma,
    /// All major reviewers.
    Mr,
    /// All major authors.
    Ma,
}

impl TargetClass {
    pub const ALL: [TargetClass; 3] = [TargetClass::Mrma, TargetClass::Mr, TargetClass::Ma];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetClass::Mrma => "mrma",
            TargetClass::Mr => "mr",
            TargetClass::Ma => "ma",
        }
    }
}

impl fmt::Display for TargetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mrma" => Ok(TargetClass::Mrma),
            "mr" => Ok(TargetClass::Mr),
            "ma" => Ok(TargetClass::Ma),
            other => Err(format!("unknown target class {other:?} (expected mrma, mr or ma)")),
        }
    }
}

pub fn in_target(class: ExperienceClass, target: TargetClass) -> bool {
    match target {
        TargetClass::Mrma => class.is_major_reviewer() && class.is_major_author(),
        TargetClass::Mr => class.is_major_reviewer(),
        TargetClass::Ma => class.is_major_author(),
    }
}

/// Quadrant counts and integer percentages for one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitDistribution {
    pub total: u64,
    /// Indexed like [`ExperienceClass::ALL`].
    pub counts: [u64; 4],
    pub percent: [u32; 4],
}

impl SplitDistribution {
    pub fn percent_of(&self, class: ExperienceClass) -> u32 {
        let idx = ExperienceClass::ALL.iter().position(|c| *c == class).unwrap();
        self.percent[idx]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionStats {
    pub splits: BTreeMap<DatasetSplit, SplitDistribution>,
}

/// Rounds shares to integer percentages with the largest-remainder method,
/// so each value is the floor or ceiling of its exact share and the row
/// sums to exactly 100.
fn integer_percentages(counts: &[u64; 4], total: u64) -> [u32; 4] {
    let mut floors = [0u32; 4];
    let mut remainders = [(0u64, 0usize); 4];
    for (i, &c) in counts.iter().enumerate() {
        let scaled = c * 100;
        floors[i] = (scaled / total) as u32;
        remainders[i] = (scaled % total, i);
    }
    let assigned: u32 = floors.iter().sum();
    // Largest remainder first; ties broken by table order.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take((100 - assigned) as usize) {
        floors[i] += 1;
    }
    floors
}

/// Quadrant distribution per split present in `examples`.
///
/// `expected_splits` lists splits that must be non-empty.
pub fn partition_stats(
    examples: &[ReviewExample],
    expected_splits: &[DatasetSplit],
) -> Result<PartitionStats, ExperienceError> {
    let mut counts: BTreeMap<DatasetSplit, [u64; 4]> = BTreeMap::new();
    for split in expected_splits {
        counts.entry(*split).or_default();
    }
    for e in examples {
        let exp = e
            .experience
            .ok_or_else(|| ExperienceError::Unclassified(e.key().to_string()))?;
        let idx = ExperienceClass::ALL.iter().position(|c| *c == exp.class).unwrap();
        counts.entry(e.split).or_default()[idx] += 1;
    }
    let mut splits = BTreeMap::new();
    for (split, c) in counts {
        let total: u64 = c.iter().sum();
        if total == 0 {
            return Err(ExperienceError::EmptySplit(split));
        }
        splits.insert(
            split,
            SplitDistribution {
                total,
                counts: c,
                percent: integer_percentages(&c, total),
            },
        );
    }
    Ok(PartitionStats { splits })
}

/// CSV laid out like the distribution table: author rows, reviewer × split columns.
pub fn stats_csv(stats: &PartitionStats) -> String {
    let splits: Vec<DatasetSplit> = stats.splits.keys().copied().collect();
    let mut out = String::from("author");
    for reviewer in ["major_reviewer", "minor_reviewer"] {
        for s in &splits {
            out.push_str(&format!(",{reviewer}_{s}"));
        }
    }
    out.push('\n');
    for author in [Level::Major, Level::Minor] {
        out.push_str(match author {
            Level::Major => "major_author",
            Level::Minor => "minor_author",
        });
        for reviewer in [Level::Major, Level::Minor] {
            for s in &splits {
                let pct = stats.splits[s].percent_of(ExperienceClass { author, reviewer });
                out.push_str(&format!(",{pct}"));
            }
        }
        out.push('\n');
    }
    out
}

/// A repository's commits and reviewed pull requests.
#[derive(Debug, Clone, Default)]
pub struct RepoActivity {
    pub history: CommitHistory,
    pub participation: PrParticipation,
}

/// Ownership of `identity` counting only activity strictly before `cutoff`.
pub fn ownership_at(
    activity: &RepoActivity,
    identity: &AuthorIdentity,
    cutoff: DateTime<Utc>,
) -> Result<OwnershipScores, ExperienceError> {
    let (alpha, c_total) = count_commits(&activity.history, identity, cutoff);
    let (r, rho) = count_prs(&activity.participation, &identity.login, cutoff);
    OwnershipScores::new(compute_aco(alpha, c_total)?, compute_rso(r, rho)?)
}

/// Submission time of the example's pull request, else the comment's own time.
pub fn cutoff_for(example: &ReviewExample, participation: &PrParticipation) -> Option<DateTime<Utc>> {
    participation.submitted_at(example.pr_id).or(example.created_at)
}

/// Scores and classifies every example against its repository's activity.
///
/// `identities` supplies commit aliases per login; logins without an entry
/// match on login alone.
pub fn attach_experience(
    examples: &mut [ReviewExample],
    activity: &BTreeMap<String, RepoActivity>,
    identities: &BTreeMap<String, AuthorIdentity>,
    threshold: f64,
) -> Result<(), ExperienceError> {
    for e in examples.iter_mut() {
        if !e.is_mined() {
            return Err(ExperienceError::Unmined(e.key().to_string()));
        }
        let repo = activity
            .get(&e.repo)
            .ok_or_else(|| ExperienceError::MissingActivity(e.repo.clone()))?;
        let cutoff = cutoff_for(e, &repo.participation).expect("mined examples carry a timestamp");
        let identity = identities
            .get(&e.reviewer)
            .cloned()
            .unwrap_or_else(|| AuthorIdentity::login(&e.reviewer));
        let scores = ownership_at(repo, &identity, cutoff)?;
        e.experience = Some(Experience {
            scores,
            class: classify(scores, threshold),
        });
    }
    Ok(())
}
