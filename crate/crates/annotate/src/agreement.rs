//! Inter-annotator agreement over the doubly-labeled calibration comments.

use std::hash::Hash;

use revcorpus::evaluation::{cohen_kappa, Judgment, KappaError, KappaResult};
use serde::Serialize;

use crate::state::{Dimension, ItemKey, Session, StateError};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum KappaOutcome {
    Computed(KappaResult),
    NotComputable { reason: String },
}

fn outcome<L: Eq + Hash>(a: &[L], b: &[L]) -> KappaOutcome {
    match cohen_kappa(a, b) {
        Ok(r) => KappaOutcome::Computed(r),
        Err(KappaError::Empty) => KappaOutcome::NotComputable {
            reason: "no items to compare".into(),
        },
        Err(e) => KappaOutcome::NotComputable { reason: e.to_string() },
    }
}

fn dimension_outcome(dimension: Dimension, pairs: &[(Judgment, Judgment)]) -> KappaOutcome {
    macro_rules! kappa_on {
        ($pairs:expr, $f:expr) => {{
            let a: Vec<_> = $pairs.iter().map(|p| $f(&p.0)).collect();
            let b: Vec<_> = $pairs.iter().map(|p| $f(&p.1)).collect();
            outcome(&a, &b)
        }};
    }
    let both_applicable: Vec<(Judgment, Judgment)> = pairs
        .iter()
        .copied()
        .filter(|(a, b)| a.applicability && b.applicability)
        .collect();
    match dimension {
        Dimension::SemanticEquivalence => kappa_on!(pairs, |j: &Judgment| j.semantic_equivalence),
        Dimension::Applicability => kappa_on!(pairs, |j: &Judgment| j.applicability),
        Dimension::HasExplanation => kappa_on!(pairs, |j: &Judgment| j.has_explanation),
        Dimension::FeedbackType if both_applicable.is_empty() => KappaOutcome::NotComputable {
            reason: "no comment was marked applicable by both annotators".into(),
        },
        Dimension::Category if both_applicable.is_empty() => KappaOutcome::NotComputable {
            reason: "no comment was marked applicable by both annotators".into(),
        },
        Dimension::FeedbackType => kappa_on!(both_applicable, |j: &Judgment| j.feedback_type),
        Dimension::Category => kappa_on!(both_applicable, |j: &Judgment| j.category),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionAgreement {
    pub dimension: Dimension,
    pub cumulative: KappaOutcome,
    /// One entry per batch of calibration samples.
    pub batches: Vec<KappaOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub doubly_labeled: usize,
    /// Samples per batch.
    pub batch_size: usize,
    pub dimensions: Vec<DimensionAgreement>,
}

/// Kappa per dimension, cumulative and per batch of `batch_size` calibration samples.
pub fn agreement(session: &Session, batch_size: usize) -> Result<AgreementReport, StateError> {
    let batch_size = batch_size.max(1);
    let pair_of = |key: &ItemKey| -> Option<(Judgment, Judgment)> {
        let a = session.calibration[0].get(key)?;
        let b = session.calibration[1].get(key)?;
        Some((a.judgment, b.judgment))
    };
    let ids: Vec<u32> = session.calibration_ids().collect();
    let pairs_for = |ids: &[u32]| -> Vec<(Judgment, Judgment)> {
        ids.iter()
            .flat_map(|&id| {
                session
                    .item(id)
                    .into_iter()
                    .flat_map(move |item| item.comments.iter().map(move |c| (id, c.alias.clone())))
            })
            .filter_map(|key| pair_of(&key))
            .collect()
    };
    let all = pairs_for(&ids);
    if all.is_empty() {
        return Err(StateError::Conflict(
            "no comment has been labeled by both annotators yet".into(),
        ));
    }
    let batches: Vec<Vec<(Judgment, Judgment)>> = ids.chunks(batch_size).map(pairs_for).collect();
    let dimensions = Dimension::ALL
        .into_iter()
        .map(|dimension| DimensionAgreement {
            dimension,
            cumulative: dimension_outcome(dimension, &all),
            batches: batches.iter().map(|b| dimension_outcome(dimension, b)).collect(),
        })
        .collect();
    Ok(AgreementReport {
        doubly_labeled: all.len(),
        batch_size,
        dimensions,
    })
}
