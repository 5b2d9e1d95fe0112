//! Pipeline configuration: one TOML file, every key overridable by a flag.

use std::path::{Path, PathBuf};

use revcorpus::evaluation::SamplingParams;
use revcorpus::experience::{TargetClass, DEFAULT_THRESHOLD};
use revcorpus::manifest::sha256_hex;
use revcorpus::oversample::{OversamplePlan, DEFAULT_FACTOR};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw input corpus.
    pub corpus: PathBuf,
    /// Response cache for live mining.
    pub cache: PathBuf,
    /// Recorded API responses; when set, mining is offline.
    pub fixtures: Option<PathBuf>,
    /// Commit histories: `<owner>/<name>.commits.json` or a clone at `<owner>/<name>`.
    pub repos: PathBuf,
    /// Root of the stage output directories.
    pub out: PathBuf,
    /// Extra bot accounts, on top of the built-in list.
    pub bots: Option<PathBuf>,
    /// Login → known `[name, email]` pairs for commits without a login.
    pub identities: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus.jsonl".into(),
            cache: "cache".into(),
            fixtures: None,
            repos: "repos".into(),
            out: "out".into(),
            bots: None,
            identities: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperienceConfig {
    pub threshold: f64,
}

impl Default for ExperienceConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OversampleConfig {
    pub target: TargetClass,
    pub factor: u32,
    pub shuffle: bool,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        Self {
            target: TargetClass::Mrma,
            factor: DEFAULT_FACTOR,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub z: f64,
    pub margin: f64,
    pub p_hat: f64,
    /// Fixed sample size instead of the computed one.
    pub size: Option<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        let p = SamplingParams::new(0, 0);
        Self {
            z: p.z,
            margin: p.margin,
            p_hat: p.p_hat,
            size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub experience: ExperienceConfig,
    pub oversample: OversampleConfig,
    pub sampling: SamplingConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().to_string().as_bytes())
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.paths.out.join(stage)
    }

    pub fn plan(&self) -> OversamplePlan {
        OversamplePlan {
            target: self.oversample.target,
            factor: self.oversample.factor,
            seed: self.seed,
            shuffle: self.oversample.shuffle,
        }
    }

    pub fn sampling_params(&self, population: u64) -> SamplingParams {
        SamplingParams {
            population,
            z: self.sampling.z,
            margin: self.sampling.margin,
            p_hat: self.sampling.p_hat,
            seed: self.seed,
        }
    }
}
