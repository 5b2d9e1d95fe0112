use chrono::{DateTime, Utc};

/// A review comment as returned by the forge for one pull request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateComment {
    pub comment_id: u64,
    pub body: String,
    /// Empty for comments whose author account no longer exists.
    pub author: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("comment body matches several review comments: {comment_ids:?}")]
pub struct AmbiguousMatch {
    pub comment_ids: Vec<u64>,
}

fn normalize(body: &str) -> String {
    body.replace("\r\n", "\n").replace('\r', "\n").trim().to_owned()
}

/// Finds the single candidate whose body equals `target_body` after
/// trimming and line-ending normalization.
pub fn match_review_comment<'a>(
    candidates: &'a [CandidateComment],
    target_body: &str,
) -> Result<Option<&'a CandidateComment>, AmbiguousMatch> {
    let target = normalize(target_body);
    let hits: Vec<&CandidateComment> = candidates.iter().filter(|c| normalize(&c.body) == target).collect();
    match hits.as_slice() {
        [] => Ok(None),
        [one] => Ok(Some(*one)),
        many => Err(AmbiguousMatch {
            comment_ids: many.iter().map(|c| c.comment_id).collect(),
        }),
    }
}
