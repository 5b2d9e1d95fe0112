//! Automatic and human evaluation instruments.

pub mod annotation;
pub mod bleu;
pub mod kappa;
pub mod report;
pub mod sampling;

pub use annotation::{
    unblind, AnnotationRecord, BlindedRecord, CommentCategory, FeedbackType, Judgment, JudgmentError, UnblindError,
};
pub use bleu::{bleu4, bleu4_text, corpus_bleu4, partitioned_metrics, tokenize, BleuScore, Partition, ScoredPair};
pub use kappa::{cohen_kappa, kappa_curve, KappaCurve, KappaError, KappaResult};
pub use report::{aggregate_report, ModelReport, ReportBundle, ReportError};
pub use sampling::{draw_sample, sample_size, BlindingMap, SampleFrame, SamplingParams};
