use std::fmt::Display;

use annotate::ServiceError;
use revcorpus::corpus::CorpusError;
use revcorpus::curation::CurationError;
use revcorpus::evaluation::sampling::SamplingError;
use revcorpus::evaluation::{ReportError, UnblindError};
use revcorpus::experience::ExperienceError;
use revcorpus::manifest::ManifestError;
use revcorpus::miner::MinerError;
use revcorpus::oversample::OversampleError;

/// A stage failure, classified by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Network(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::Network(_) => 3,
        }
    }

    /// Prefixes the message, keeping the class.
    pub fn context(self, what: impl Display) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{what}: {m}")),
            CliError::Network(m) => CliError::Network(format!("{what}: {m}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(e) => e.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Io(e) => e.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<MinerError> for CliError {
    fn from(e: MinerError) -> Self {
        match e {
            e if e.is_network() => CliError::Network(e.to_string()),
            e @ MinerError::Http { .. } => CliError::Network(e.to_string()),
            MinerError::Io(e) => e.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<CurationError> for CliError {
    fn from(e: CurationError) -> Self {
        match e {
            e @ CurationError::Registry { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<OversampleError> for CliError {
    fn from(e: OversampleError) -> Self {
        match e {
            OversampleError::Io(e) => e.into(),
            OversampleError::Manifest(e) => e.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}

validation_from!(
    ExperienceError,
    SamplingError,
    UnblindError,
    ReportError,
    serde_json::Error
);

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Log(e) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}
