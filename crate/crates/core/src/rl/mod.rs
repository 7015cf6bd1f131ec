//! Multi-stage PPO fine-tuning against a diversity plus match reward, with a
//! per-token KL penalty toward the supervised policy, and the single-stage
//! variant.

mod ppo;
mod reward;
mod rollout;
mod train;

pub use ppo::{
    clipped_surrogate, compute_advantages, fit_value_head, normalize_advantages, ppo_update, PpoConfig, PpoStats,
    StageMode,
};
pub use reward::{
    div_from_similarity, match_from_score, reward_div, reward_match, MatchMode, RewardConfig,
};
pub use rollout::{
    action_log_prob, rollout_episode, rollout_single, rollout_stage, MoleculeOutcome, RolloutEnv, StageTrajectory,
};
pub use train::{train_rl, write_metrics_csv, Checkpoint, IterationStats, RlOutcome};

use thiserror::Error;

use crate::fingerprints::FingerprintError;
use crate::metrics::MetricsError;
use crate::policy::PolicyError;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid RL config: {0}")]
    InvalidConfig(String),
    #[error("prompt {0} has no reference molecule for BLEU rewards")]
    MissingReference(String),
    #[error("non-finite PPO loss")]
    NonFiniteLoss,
    #[error("no prompts to train on")]
    NoPrompts,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}
