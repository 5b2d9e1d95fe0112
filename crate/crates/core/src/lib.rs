//! Experience-aware code review corpus: mining, curation, ownership
//! classification, oversampling and evaluation.

pub mod corpus;
pub mod curation;
pub mod evaluation;
pub mod experience;
pub mod manifest;
pub mod miner;
pub mod oversample;
