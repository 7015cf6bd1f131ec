//! Experiment plumbing: configuration, corpus ingestion, phase execution,
//! run manifests and report comparison.

mod compare;
mod config;
mod corpus;
mod manifest;
mod phases;
mod prompts;

pub use compare::{compare_report, mean, median, Comparison, MetricSummary};
pub use config::{CollectConfig, EvalConfig, ExperimentConfig, Method, ModelConfig, PromptConfig, RlSettings, Stage};
pub use corpus::{ingest_corpus, ingest_text, Corpus, PropertyIndex, RejectedLine};
pub use manifest::{
    record_timing, sha256_hex, write_atomic, Artifact, Phase, PhaseRecord, RunManifest, MANIFEST_FILE, TIMINGS_FILE,
};
pub use phases::{
    decode_prompt, evaluate_generations, load_reports, phase_key, prompt_sets, run_phase, run_pipeline, summary_csv,
    Generation,
};
pub use prompts::{build_prompt_sets, PromptPlan, PromptSets};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::decoding::DecodeError;
use crate::metrics::MetricsError;
use crate::policy::PolicyError;
use crate::rl::RlError;
use crate::sft::SftError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("corpus has {found} molecules, at least {required} required")]
    CorpusTooSmall { found: usize, required: usize },
    #[error("missing upstream artifact: {0}")]
    MissingUpstream(String),
    #[error("prompt sets differ: {0}")]
    PromptSetMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Rl(#[from] RlError),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl HarnessError {
    pub fn class(&self) -> ErrorClass {
        match self {
            HarnessError::ConfigInvalid(_) | HarnessError::Decode(_) => ErrorClass::Config,
            HarnessError::Sft(SftError::NonFiniteLoss { .. })
            | HarnessError::Sft(SftError::Policy(PolicyError::NonFiniteLoss))
            | HarnessError::Policy(PolicyError::NonFiniteLoss)
            | HarnessError::Rl(RlError::NonFiniteLoss)
            | HarnessError::Rl(RlError::Policy(PolicyError::NonFiniteLoss)) => ErrorClass::Numerical,
            HarnessError::Rl(RlError::InvalidConfig(_)) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
