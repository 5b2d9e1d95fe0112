//! Experience-aware oversampling of the training split, and split emission.
//!
//! With the default factor of 4 every target example appears four times
//! (three extra copies). For a target class holding 14% of training data
//! that moves the target:rest ratio from 0.163 to 0.651, roughly 2:3.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{render_corpus, DatasetSplit, ExampleKey, ReviewExample};
use crate::experience::{in_target, TargetClass};
use crate::manifest::{FileDigest, Manifest, ManifestError};

pub const DEFAULT_FACTOR: u32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum OversampleError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("replication factor must be at least 1, got {0}")]
    BadFactor(u32),
    #[error("target fraction must lie in [0, 1), got {0}")]
    BadFraction(f64),
    #[error("example {0} has no experience quadrant")]
    Unclassified(ExampleKey),
    #[error("example {key} is in both {first} and {second}")]
    Overlap {
        key: ExampleKey,
        first: DatasetSplit,
        second: DatasetSplit,
    },
    #[error("{split} file contains an example from {found}: {key}")]
    WrongSplit {
        split: DatasetSplit,
        found: DatasetSplit,
        key: ExampleKey,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OversamplePlan {
    pub target: TargetClass,
    /// Total copies of each target example, original included.
    pub factor: u32,
    pub seed: u64,
    pub shuffle: bool,
}

impl OversamplePlan {
    pub fn new(target: TargetClass, seed: u64) -> Self {
        Self {
            target,
            factor: DEFAULT_FACTOR,
            seed,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<(), OversampleError> {
        if self.factor < 1 {
            return Err(OversampleError::BadFactor(self.factor));
        }
        Ok(())
    }
}

/// Replicates target-class training examples `plan.factor` times.
///
/// Without shuffling the originals keep their order and the copies follow
/// in rounds; with shuffling the whole sequence is permuted by a ChaCha8
/// generator seeded from `plan.seed`.
pub fn oversample(train: &[ReviewExample], plan: &OversamplePlan) -> Result<Vec<ReviewExample>, OversampleError> {
    plan.validate()?;
    if train.is_empty() {
        return Err(OversampleError::EmptyTrain);
    }
    let mut targets = Vec::new();
    for (idx, e) in train.iter().enumerate() {
        let exp = e.experience.ok_or_else(|| OversampleError::Unclassified(e.key()))?;
        if in_target(exp.class, plan.target) {
            targets.push(idx);
        }
    }
    let extra = plan.factor as usize - 1;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.reserve(extra * targets.len());
    for _ in 0..extra {
        order.extend_from_slice(&targets);
    }
    if plan.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        order.shuffle(&mut rng);
    }
    Ok(order.into_iter().map(|i| train[i].clone()).collect())
}

/// Target:non-target multiset ratio after replicating a fraction `p` of
/// the data `factor` times: `factor * p / (1 - p)`.
pub fn achieved_ratio(p: f64, factor: u32) -> Result<f64, OversampleError> {
    if factor < 1 {
        return Err(OversampleError::BadFactor(factor));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(OversampleError::BadFraction(p));
    }
    Ok(factor as f64 * p / (1.0 - p))
}

pub fn split_file_name(split: DatasetSplit) -> String {
    format!("{split}.jsonl")
}

/// Extra provenance recorded in the emitted manifest.
#[derive(Debug, Clone, Default)]
pub struct EmitContext {
    pub inputs: std::collections::BTreeMap<String, FileDigest>,
    pub config: serde_json::Value,
}

/// Writes `train.jsonl`, `validation.jsonl`, `test.jsonl` and `manifest.json`.
///
/// Validation and test are written in input order and never depend on the plan.
pub fn emit_splits(
    train: &[ReviewExample],
    validation: &[ReviewExample],
    test: &[ReviewExample],
    out_dir: &Path,
    plan: &OversamplePlan,
    context: &EmitContext,
) -> Result<Manifest, OversampleError> {
    check_disjoint(train, validation, test)?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest::new("oversample").with_config(context.config.clone());
    manifest.seed = Some(plan.seed);
    manifest.inputs = context.inputs.clone();
    manifest.params = serde_json::to_value(plan).expect("plan serializes");
    for (split, examples) in [
        (DatasetSplit::Train, train),
        (DatasetSplit::Validation, validation),
        (DatasetSplit::Test, test),
    ] {
        if let Some(stray) = examples.iter().find(|e| e.split != split) {
            return Err(OversampleError::WrongSplit {
                split,
                found: stray.split,
                key: stray.key(),
            });
        }
        let bytes = render_corpus(examples);
        let name = split_file_name(split);
        fs::write(out_dir.join(&name), &bytes)?;
        manifest
            .outputs
            .insert(name, FileDigest::of(&bytes, Some(examples.len() as u64)));
    }
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn check_disjoint(
    train: &[ReviewExample],
    validation: &[ReviewExample],
    test: &[ReviewExample],
) -> Result<(), OversampleError> {
    let train_keys: HashSet<ExampleKey> = train.iter().map(ReviewExample::key).collect();
    let val_keys: HashSet<ExampleKey> = validation.iter().map(ReviewExample::key).collect();
    for e in validation {
        if train_keys.contains(&e.key()) {
            return Err(OversampleError::Overlap {
                key: e.key(),
                first: DatasetSplit::Train,
                second: DatasetSplit::Validation,
            });
        }
    }
    for e in test {
        let key = e.key();
        let first = if val_keys.contains(&key) {
            DatasetSplit::Validation
        } else if train_keys.contains(&key) {
            DatasetSplit::Train
        } else {
            continue;
        };
        return Err(OversampleError::Overlap {
            key,
            first,
            second: DatasetSplit::Test,
        });
    }
    Ok(())
}
