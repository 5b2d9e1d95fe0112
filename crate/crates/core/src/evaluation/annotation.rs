//! Human judgment taxonomy and the annotation record.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::sampling::BlindingMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackType {
    Suggestion,
    Concern,
    ConfusedQuestion,
}

impl FeedbackType {
    pub const ALL: [FeedbackType; 3] = [
        FeedbackType::Suggestion,
        FeedbackType::Concern,
        FeedbackType::ConfusedQuestion,
    ];

    pub fn code(self) -> &'static str {
        match self {
            FeedbackType::Suggestion => "suggestion",
            FeedbackType::Concern => "concern",
            FeedbackType::ConfusedQuestion => "confused_question",
        }
    }
}

macro_rules! categories {
    ($($variant:ident => $code:literal),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum CommentCategory {
            $($variant),+
        }

        impl CommentCategory {
            pub const ALL: [CommentCategory; 18] = [$(CommentCategory::$variant),+];

            pub fn code(self) -> &'static str {
                match self {
                    $(CommentCategory::$variant => $code),+
                }
            }
        }
    };
}

categories! {
    LargerDefect => "larger_defect",
    Validation => "validation",
    Logical => "logical",
    Interface => "interface",
    SolutionApproach => "solution_approach",
    Question => "question",
    DesignDiscussion => "design_discussion",
    Resource => "resource",
    Documentation => "documentation",
    OrganizationOfCode => "organization_of_code",
    AlternateOutput => "alternate_output",
    Support => "support",
    Timing => "timing",
    NamingConvention => "naming_convention",
    Praise => "praise",
    VisualRepresentation => "visual_representation",
    FalsePositives => "false_positives",
    Others => "others",
}

impl fmt::Display for CommentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for CommentCategory {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.code() == s)
            .ok_or_else(|| format!("unknown comment category {s:?}"))
    }
}

impl fmt::Display for FeedbackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JudgmentError {
    #[error("feedback_type is set but the comment is not applicable")]
    FeedbackWithoutApplicability,
    #[error("category is set but the comment is not applicable")]
    CategoryWithoutApplicability,
    #[error("applicable comment is missing feedback_type")]
    MissingFeedback,
    #[error("applicable comment is missing category")]
    MissingCategory,
}

/// The five judged dimensions for one generated comment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Judgment {
    pub semantic_equivalence: bool,
    pub applicability: bool,
    #[serde(default)]
    pub feedback_type: Option<FeedbackType>,
    pub has_explanation: bool,
    #[serde(default)]
    pub category: Option<CommentCategory>,
}

impl Judgment {
    pub fn not_applicable(semantic_equivalence: bool, has_explanation: bool) -> Self {
        Self {
            semantic_equivalence,
            applicability: false,
            feedback_type: None,
            has_explanation,
            category: None,
        }
    }

    pub fn applicable(
        semantic_equivalence: bool,
        feedback_type: FeedbackType,
        has_explanation: bool,
        category: CommentCategory,
    ) -> Self {
        Self {
            semantic_equivalence,
            applicability: true,
            feedback_type: Some(feedback_type),
            has_explanation,
            category: Some(category),
        }
    }

    /// Feedback type and category are present exactly when applicable.
    pub fn validate(&self) -> Result<(), JudgmentError> {
        match (self.applicability, self.feedback_type, self.category) {
            (true, None, _) => Err(JudgmentError::MissingFeedback),
            (true, _, None) => Err(JudgmentError::MissingCategory),
            (false, Some(_), _) => Err(JudgmentError::FeedbackWithoutApplicability),
            (false, _, Some(_)) => Err(JudgmentError::CategoryWithoutApplicability),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: u32,
    pub annotator_id: String,
    /// Generator of the judged comment. Never shown to annotators.
    pub model_id: String,
    #[serde(flatten)]
    pub judgment: Judgment,
    pub annotated_at: DateTime<Utc>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<(), JudgmentError> {
        self.judgment.validate()
    }
}

/// A final judgment as the annotation service exports it: the comment is
/// identified by its per-item alias, never by model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindedRecord {
    pub sample_id: u32,
    pub alias: String,
    pub annotator_id: String,
    #[serde(flatten)]
    pub judgment: Judgment,
    pub annotated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UnblindError {
    #[error("no model behind alias {alias} of sample {sample_id}")]
    UnknownAlias { sample_id: u32, alias: String },
    #[error("sample {sample_id}, alias {alias}: {source}")]
    Invalid {
        sample_id: u32,
        alias: String,
        source: JudgmentError,
    },
}

/// Joins exported records with the blinding map.
pub fn unblind(records: &[BlindedRecord], map: &BlindingMap) -> Result<Vec<AnnotationRecord>, UnblindError> {
    records
        .iter()
        .map(|r| {
            r.judgment.validate().map_err(|source| UnblindError::Invalid {
                sample_id: r.sample_id,
                alias: r.alias.clone(),
                source,
            })?;
            let model = map
                .model_of(r.sample_id, &r.alias)
                .ok_or_else(|| UnblindError::UnknownAlias {
                    sample_id: r.sample_id,
                    alias: r.alias.clone(),
                })?;
            Ok(AnnotationRecord {
                sample_id: r.sample_id,
                annotator_id: r.annotator_id.clone(),
                model_id: model.to_owned(),
                judgment: r.judgment,
                annotated_at: r.annotated_at,
            })
        })
        .collect()
}
