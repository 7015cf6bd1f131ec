use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use super::{HarnessError, PromptPlan};
use crate::decoding::{DecodeConfig, Scheme};
use crate::metrics::DEFAULT_THRESHOLDS;
use crate::policy::{DEFAULT_D_EMB, DEFAULT_D_H};
use crate::rl::{PpoConfig, RewardConfig};
use crate::sft::{FilterMode, PromptSpec, TrainConfig, DEFAULT_COLLECT_WIDTH, DEFAULT_MAX_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub d_h: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_emb: DEFAULT_D_EMB,
            d_h: DEFAULT_D_H,
        }
    }
}

/// Explicit prompt lists. When both are empty the lists are drawn from the
/// corpus with `plan`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub plan: PromptPlan,
    pub train: Vec<PromptSpec>,
    pub eval: Vec<PromptSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    /// Beam width T.
    pub width: usize,
    pub max_tokens: usize,
    pub filter: FilterMode,
    pub max_k: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            width: DEFAULT_COLLECT_WIDTH,
            max_tokens: 40,
            filter: FilterMode::Standard,
            max_k: DEFAULT_MAX_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RlSettings {
    #[serde(flatten)]
    pub ppo: PpoConfig,
    /// Molecules per episode.
    pub k: usize,
}

impl Default for RlSettings {
    fn default() -> Self {
        RlSettings {
            ppo: PpoConfig::default(),
            k: 10,
        }
    }
}

// Flattened structs accept any key, so `k` is split off by hand and the rest
// goes through the strict PPO deserializer.
impl<'de> Deserialize<'de> for RlSettings {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut map = serde_json::Map::deserialize(d)?;
        let k = match map.remove("k") {
            Some(v) => serde_json::from_value(v).map_err(D::Error::custom)?,
            None => RlSettings::default().k,
        };
        let ppo = serde_json::from_value(serde_json::Value::Object(map)).map_err(D::Error::custom)?;
        Ok(RlSettings { ppo, k })
    }
}

/// Which checkpoint an evaluation decodes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Sft,
    Rl,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Sft => "sft",
            Stage::Rl => "rl",
        }
    }
}

/// `Sequence` decodes K molecules as one stream after the diverse prompt;
/// `Baseline` decodes K single molecules after the description prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sequence,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Molecules per prompt.
    pub k: usize,
    pub policy: Stage,
    pub method: Method,
    pub thresholds: Vec<f64>,
    /// Name of the generation and report files; derived when unset.
    pub label: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 50,
            policy: Stage::Rl,
            method: Method::Sequence,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            label: None,
        }
    }
}

/// One experiment. Every field has a default; phase seeds are offset by
/// the global `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    /// Ingestion fails below this many distinct molecules.
    pub min_corpus: usize,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub prompts: PromptConfig,
    pub pretrain: TrainConfig,
    pub collect: CollectConfig,
    pub sft: TrainConfig,
    pub rl: RlSettings,
    pub reward: RewardConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            corpus: PathBuf::from("data/corpus.smi"),
            min_corpus: 200,
            output_dir: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            prompts: PromptConfig::default(),
            pretrain: TrainConfig {
                epochs: 100,
                batch_size: 16,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
            collect: CollectConfig::default(),
            sft: TrainConfig {
                epochs: 80,
                batch_size: 4,
                learning_rate: 1e-3,
                shuffle_molecules: true,
                ..TrainConfig::default()
            },
            rl: RlSettings::default(),
            reward: RewardConfig::default(),
            decode: DecodeConfig {
                scheme: Scheme::Nucleus,
                temperature: 1.0,
                max_tokens: 40,
                ..DecodeConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Keys left out of a table keep the experiment defaults, so
    /// `[sft]\nepochs = 5` changes only the SFT epoch count.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let invalid = |e: &dyn std::fmt::Display| HarnessError::ConfigInvalid(e.to_string());
        let user: toml::Table = text.parse().map_err(|e| invalid(&e))?;
        let mut merged = toml::Table::try_from(ExperimentConfig::default()).map_err(|e| invalid(&e))?;
        merge_tables(&mut merged, user);
        merged.try_into().map_err(|e| invalid(&e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Checks value ranges and that the corpus file exists. Prompt sets are
    /// checked against the corpus when a phase builds them.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::ConfigInvalid(m));
        if !self.corpus.is_file() {
            return bad(format!("corpus {} does not exist", self.corpus.display()));
        }
        if self.model.d_emb == 0 || self.model.d_h == 0 {
            return bad("model sizes must be positive".into());
        }
        for (name, t) in [("pretrain", &self.pretrain), ("sft", &self.sft)] {
            if t.epochs == 0 || t.batch_size == 0 {
                return bad(format!("{name}: epochs and batch_size must be positive"));
            }
            if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
                return bad(format!("{name}: learning_rate must be positive"));
            }
            if !(0.0..1.0).contains(&t.heldout_fraction) {
                return bad(format!("{name}: heldout_fraction must lie in [0, 1)"));
            }
        }
        if self.collect.width == 0 || self.collect.max_k == 0 || self.collect.max_tokens == 0 {
            return bad("collect: width, max_k and max_tokens must be positive".into());
        }
        if self.rl.k == 0 || self.eval.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.eval.thresholds.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
            return bad("eval thresholds must lie in (0, 1]".into());
        }
        if self.eval.method == Method::Sequence && !matches!(self.decode.scheme, Scheme::Greedy | Scheme::Temperature | Scheme::Nucleus) {
            return bad(format!("{} cannot decode a molecule sequence", self.decode.scheme.name()));
        }
        if let Some(label) = &self.eval.label {
            if label.is_empty() || label.contains(['/', '\\']) {
                return bad(format!("label {label:?} is not a file name"));
            }
        }
        self.rl.ppo.validate().map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        self.reward.validate().map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        self.decode.validate().map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        Ok(())
    }

    /// Report label, e.g. `rl_ours` or `sft_beam`.
    pub fn eval_label(&self) -> String {
        if let Some(l) = &self.eval.label {
            return l.clone();
        }
        let scheme = match self.eval.method {
            Method::Sequence => "ours".to_string(),
            Method::Baseline => match self.decode.scheme {
                Scheme::Temperature | Scheme::Nucleus => {
                    format!("{}{}", self.decode.scheme.name(), self.decode.temperature)
                }
                s => s.name().to_string(),
            },
        };
        format!("{}_{}", self.eval.policy.name(), scheme)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.seed = 9;
        c.rl.ppo.stage_mode = crate::rl::StageMode::Single;
        c.collect.filter = FilterMode::Hard { threshold: 0.65 };
        c.prompts.eval.push(PromptSpec::new(vec![crate::policy::PropertyConstraint::new(
            crate::policy::PropertyFamily::Hbd,
            1,
        )]));
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_sections() {
        let c = ExperimentConfig::from_toml("seed = 3\n[rl]\nk = 4\niterations = 7\n[decode]\nscheme = \"beam\"\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.rl.k, 4);
        assert_eq!(c.rl.ppo.iterations, 7);
        assert_eq!(c.rl.ppo.clip_epsilon, PpoConfig::default().clip_epsilon);
        assert_eq!(c.decode.scheme, Scheme::Beam);
    }

    #[test]
    fn shipped_default_file_matches_defaults() {
        let text = include_str!("../../../../configs/default.toml");
        assert_eq!(ExperimentConfig::from_toml(text).unwrap(), ExperimentConfig::default());
        // Every key is spelled out, so the file stays complete.
        let full: toml::Table = text.parse().unwrap();
        let defaults = toml::Table::try_from(ExperimentConfig::default()).unwrap();
        assert_eq!(full, defaults);
    }

    #[test]
    fn partial_tables_keep_experiment_defaults() {
        let c = ExperimentConfig::from_toml("[sft]\nepochs = 3\n[decode]\ntop_p = 0.7\n").unwrap();
        let d = ExperimentConfig::default();
        assert_eq!(c.sft.epochs, 3);
        assert_eq!(c.sft.learning_rate, d.sft.learning_rate);
        assert!(c.sft.shuffle_molecules);
        assert_eq!(c.decode.scheme, d.decode.scheme);
        assert_eq!(c.decode.max_tokens, d.decode.max_tokens);
        assert_eq!(c.decode.top_p, 0.7);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 1").is_err());
        assert!(ExperimentConfig::from_toml("[decode]\nsheme = 1").is_err());
        assert!(ExperimentConfig::from_toml("[rl]\nclipp = 0.1").is_err());
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c.smi");
        std::fs::write(&corpus, "CCO\n").unwrap();
        let mut c = ExperimentConfig {
            corpus: corpus.clone(),
            ..Default::default()
        };
        c.validate().unwrap();
        c.corpus = dir.path().join("missing.smi");
        assert!(c.validate().is_err());
        c.corpus = corpus;
        c.decode.scheme = Scheme::Beam;
        assert!(c.validate().is_err());
        c.eval.method = Method::Baseline;
        c.validate().unwrap();
        assert_eq!(c.eval_label(), "rl_beam");
        c.reward.beta = -1.0;
        assert!(c.validate().is_err());
    }
}
