//! Self-collected supervised fine-tuning: prompts, collection by beam
//! search, filtering, the concatenated-sequence dataset, and training.

mod dataset;
mod filter;
mod prompt;
mod train;

pub use dataset::{training_sequence, Provenance, SftDataset, SftRecord};
pub use filter::{
    collect, filter, FilterMode, FilteredMolecule, DEFAULT_COLLECT_WIDTH, DEFAULT_MAX_K, HARD_FILTER_THRESHOLD,
};
pub use prompt::PromptSpec;
pub use train::{
    pretrain, sample_validity, train_sft, CorpusMolecule, EpochStats, TrainConfig, TrainOutcome, MIN_PRETRAIN_CORPUS,
};

use thiserror::Error;

use crate::fingerprints::FingerprintError;
use crate::policy::PolicyError;

#[derive(Debug, Error)]
pub enum SftError {
    #[error("no molecules left after filtering for prompt {0}")]
    EmptyAfterFilter(String),
    #[error("corpus has {found} molecules, at least {required} required")]
    CorpusTooSmall { found: usize, required: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}
