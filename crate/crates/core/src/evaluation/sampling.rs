//! Sizing and drawing the blinded human-evaluation sample.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ExampleKey, ReviewExample};
use crate::experience::ExperienceClass;
use crate::manifest::sha256_hex;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("margin of error must lie in (0, 1), got {0}")]
    BadMargin(f64),
    #[error("expected proportion must lie in (0, 1), got {0}")]
    BadProportion(f64),
    #[error("z must be positive, got {0}")]
    BadZ(f64),
    #[error("sample of {n} requested from a population of {population}")]
    TooLarge { n: usize, population: usize },
    #[error("model {model} has {got} generated comments for {expected} test examples")]
    Misaligned { model: String, got: usize, expected: usize },
    #[error("at most {max} models can be blinded, got {got}")]
    TooManyModels { max: usize, got: usize },
    #[error("no models to compare")]
    NoModels,
    #[error("frame file: {0}")]
    Frame(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub population: u64,
    pub z: f64,
    pub margin: f64,
    pub p_hat: f64,
    pub seed: u64,
}

impl SamplingParams {
    /// 95% confidence (z = 1.96), ±10% margin, p̂ = 0.5.
    pub fn new(population: u64, seed: u64) -> Self {
        Self {
            population,
            z: 1.96,
            margin: 0.10,
            p_hat: 0.5,
            seed,
        }
    }
}

/// Finite-population-corrected sample size for estimating a proportion:
/// `n0 = z² p̂(1-p̂) / e²`, `n = ceil(n0 / (1 + n0 / N))`.
pub fn sample_size(params: &SamplingParams) -> Result<u64, SamplingError> {
    if params.population == 0 {
        return Err(SamplingError::EmptyPopulation);
    }
    if !(params.margin > 0.0 && params.margin <= 1.0) {
        return Err(SamplingError::BadMargin(params.margin));
    }
    if !(params.p_hat > 0.0 && params.p_hat < 1.0) {
        return Err(SamplingError::BadProportion(params.p_hat));
    }
    if params.z.is_nan() || params.z <= 0.0 {
        return Err(SamplingError::BadZ(params.z));
    }
    let n0 = params.z * params.z * params.p_hat * (1.0 - params.p_hat) / (params.margin * params.margin);
    let n = n0 / (1.0 + n0 / params.population as f64);
    // Absorb representation error so exact integers do not round up.
    let n = (n - 1e-9).ceil().max(1.0) as u64;
    Ok(n.min(params.population))
}

/// One generated comment under its per-item alias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedComment {
    pub alias: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameItem {
    /// 1-based position in the frame.
    pub sample_id: u32,
    pub example: ExampleKey,
    pub m_pre: String,
    /// The reviewer's actual comment.
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "class_code")]
    pub quadrant: Option<ExperienceClass>,
    /// Presentation order is randomized per item.
    pub comments: Vec<BlindedComment>,
}

mod class_code {
    use super::ExperienceClass;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<ExperienceClass>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(c) => s.serialize_str(c.code()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<ExperienceClass>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        raw.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
    }
}

/// The annotator-facing half of a drawn sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    pub items: Vec<FrameItem>,
}

impl SampleFrame {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("frame item serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SamplingError> {
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item: FrameItem =
                serde_json::from_str(line).map_err(|e| SamplingError::Frame(format!("line {}: {e}", i + 1)))?;
            items.push(item);
        }
        Ok(Self { items })
    }

    pub fn load(path: &Path) -> Result<Self, SamplingError> {
        let file = std::fs::File::open(path).map_err(|e| SamplingError::Frame(format!("{}: {e}", path.display())))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| SamplingError::Frame(e.to_string()))?);
            text.push('\n');
        }
        Self::from_jsonl(&text)
    }

    /// Content hash of the frame; identifies it to the annotation service.
    pub fn frame_id(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())[..16].to_owned()
    }

    pub fn item(&self, sample_id: u32) -> Option<&FrameItem> {
        self.items.iter().find(|i| i.sample_id == sample_id)
    }

    pub fn model_count(&self) -> usize {
        self.items.first().map_or(0, |i| i.comments.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindingEntry {
    pub sample_id: u32,
    pub alias: String,
    pub model_id: String,
}

/// Alias → model mapping. Kept apart from the frame and never served to annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindingMap {
    pub frame_id: String,
    pub entries: Vec<BlindingEntry>,
}

impl BlindingMap {
    pub fn model_of(&self, sample_id: u32, alias: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.sample_id == sample_id && e.alias == alias)
            .map(|e| e.model_id.as_str())
    }
}

const ALIASES: [&str; 26] = [
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M", "N", "O", "P", "Q", "R", "S", "T", "U", "V", "W",
    "X", "Y", "Z",
];

/// Draws `n` test examples uniformly without replacement and blinds the
/// generated comments of every model.
///
/// `generated` maps a model id to its comments, aligned with `test`.
pub fn draw_sample(
    test: &[ReviewExample],
    generated: &BTreeMap<String, Vec<String>>,
    n: usize,
    seed: u64,
) -> Result<(SampleFrame, BlindingMap), SamplingError> {
    if n > test.len() {
        return Err(SamplingError::TooLarge {
            n,
            population: test.len(),
        });
    }
    if generated.is_empty() {
        return Err(SamplingError::NoModels);
    }
    if generated.len() > ALIASES.len() {
        return Err(SamplingError::TooManyModels {
            max: ALIASES.len(),
            got: generated.len(),
        });
    }
    for (model, comments) in generated {
        if comments.len() != test.len() {
            return Err(SamplingError::Misaligned {
                model: model.clone(),
                got: comments.len(),
                expected: test.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, test.len(), n);
    let models: Vec<&String> = generated.keys().collect();
    let mut items = Vec::with_capacity(n);
    let mut blinding = Vec::with_capacity(n * models.len());
    for (pos, idx) in chosen.iter().enumerate() {
        let sample_id = pos as u32 + 1;
        let example = &test[idx];
        let mut order = models.clone();
        order.shuffle(&mut rng);
        let mut comments = Vec::with_capacity(order.len());
        for (alias, model) in ALIASES.iter().zip(order) {
            comments.push(BlindedComment {
                alias: alias.to_string(),
                text: generated[model][idx].clone(),
            });
            blinding.push(BlindingEntry {
                sample_id,
                alias: alias.to_string(),
                model_id: model.clone(),
            });
        }
        items.push(FrameItem {
            sample_id,
            example: example.key(),
            m_pre: example.m_pre.clone(),
            reference: example.r_nl.clone(),
            quadrant: example.experience.map(|e| e.class),
            comments,
        });
    }
    let frame = SampleFrame { items };
    let map = BlindingMap {
        frame_id: frame.frame_id(),
        entries: blinding,
    };
    Ok((frame, map))
}
