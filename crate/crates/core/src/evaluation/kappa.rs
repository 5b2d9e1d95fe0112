//! Cohen's kappa for two annotators.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KappaError {
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no items to compare")]
    Empty,
    #[error("kappa is undefined: expected agreement is 1 (both annotators used one identical label)")]
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub observed: f64,
    pub expected: f64,
    pub items: usize,
}

/// `kappa = (po - pe) / (1 - pe)` with `pe` from each annotator's marginals.
pub fn cohen_kappa<L: Eq + Hash>(labels_a: &[L], labels_b: &[L]) -> Result<KappaResult, KappaError> {
    if labels_a.len() != labels_b.len() {
        return Err(KappaError::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    let n = labels_a.len();
    if n == 0 {
        return Err(KappaError::Empty);
    }
    let agree = labels_a.iter().zip(labels_b).filter(|(a, b)| a == b).count();
    let mut marginal_a: HashMap<&L, usize> = HashMap::new();
    let mut marginal_b: HashMap<&L, usize> = HashMap::new();
    for (a, b) in labels_a.iter().zip(labels_b) {
        *marginal_a.entry(a).or_default() += 1;
        *marginal_b.entry(b).or_default() += 1;
    }
    let nf = n as f64;
    // Integer products keep pe exact where possible.
    let cross: usize = marginal_a
        .iter()
        .map(|(label, &ca)| ca * marginal_b.get(label).copied().unwrap_or(0))
        .sum();
    if cross == n * n {
        return Err(KappaError::Undefined);
    }
    let observed = agree as f64 / nf;
    let expected = cross as f64 / (nf * nf);
    // (po - pe) / (1 - pe) scaled by n^2, so only the final division rounds.
    let numerator = (agree as i128) * (n as i128) - cross as i128;
    let denominator = (n as i128) * (n as i128) - cross as i128;
    Ok(KappaResult {
        kappa: numerator as f64 / denominator as f64,
        observed,
        expected,
        items: n,
    })
}

/// Kappa per consecutive batch of `batch` items plus the cumulative value
/// after each batch. Undefined batches are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaCurve {
    pub batch_size: usize,
    pub batches: Vec<Option<KappaResult>>,
    pub cumulative: Vec<Option<KappaResult>>,
}

pub fn kappa_curve<L: Eq + Hash>(labels_a: &[L], labels_b: &[L], batch: usize) -> Result<KappaCurve, KappaError> {
    if labels_a.len() != labels_b.len() {
        return Err(KappaError::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    let batch = batch.max(1);
    let mut batches = Vec::new();
    let mut cumulative = Vec::new();
    let mut start = 0;
    while start < labels_a.len() {
        let end = (start + batch).min(labels_a.len());
        batches.push(cohen_kappa(&labels_a[start..end], &labels_b[start..end]).ok());
        cumulative.push(cohen_kappa(&labels_a[..end], &labels_b[..end]).ok());
        start = end;
    }
    Ok(KappaCurve {
        batch_size: batch,
        batches,
        cumulative,
    })
}
