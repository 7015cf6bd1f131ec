//! Decoding schemes over a trained policy: greedy, temperature and nucleus
//! sampling, beam search and its diverse and contrastive variants, and
//! multi-molecule sequence generation.

mod beam;
mod contrastive;
mod sampling;

pub use beam::{beam_search, diverse_beam_search, Hypothesis};
pub use contrastive::{contrastive_beam_search, contrastive_search_many};
pub use sampling::{generate_sequence, greedy, sample, split_segments, Sampler};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{TokenId, EOS, SEP};
use crate::smiles::CanonicalSmiles;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Greedy,
    Temperature,
    Nucleus,
    Beam,
    DiverseBeam,
    ContrastiveBeam,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Greedy => "greedy",
            Scheme::Temperature => "temperature",
            Scheme::Nucleus => "nucleus",
            Scheme::Beam => "beam",
            Scheme::DiverseBeam => "diverse_beam",
            Scheme::ContrastiveBeam => "contrastive_beam",
        }
    }
}

/// Temperatures used for the sampling baselines.
pub const BASELINE_TEMPERATURES: [f64; 3] = [0.7, 1.0, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub scheme: Scheme,
    pub temperature: f64,
    pub top_p: f64,
    pub beam_width: usize,
    pub group_count: usize,
    pub diversity_penalty: f64,
    pub penalty_alpha: f64,
    /// Token limit for one molecule.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            scheme: Scheme::Greedy,
            temperature: 1.0,
            top_p: 0.8,
            beam_width: 20,
            group_count: 4,
            diversity_penalty: 0.5,
            penalty_alpha: 0.5,
            max_tokens: 64,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::InvalidConfig(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if self.beam_width == 0 {
            return bad("beam_width must be at least 1");
        }
        if self.group_count == 0 || self.beam_width % self.group_count != 0 {
            return bad("beam_width must be divisible by group_count");
        }
        if !(self.diversity_penalty >= 0.0 && self.diversity_penalty.is_finite()) {
            return bad("diversity_penalty must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.penalty_alpha) {
            return bad("penalty_alpha must lie in [0, 1]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1");
        }
        Ok(())
    }

    pub fn sampler(&self) -> Sampler {
        match self.scheme {
            Scheme::Nucleus => Sampler::Nucleus {
                temperature: self.temperature,
                top_p: self.top_p,
            },
            _ => Sampler::Temperature(self.temperature),
        }
    }
}

/// Why decoding of one molecule stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Separator,
    End,
    MaxTokens,
}

impl Termination {
    pub(crate) fn of(token: TokenId) -> Option<Termination> {
        match token {
            SEP => Some(Termination::Separator),
            EOS => Some(Termination::End),
            _ => None,
        }
    }
}

/// One decoded molecule string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    /// Generated tokens, without the terminator.
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// Sum of token log-probabilities, terminator included.
    pub log_prob: f64,
    pub termination: Termination,
}

/// One molecule segment of a generated stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub raw: String,
    /// `None` for unparseable or truncated segments.
    pub canonical: Option<CanonicalSmiles>,
    /// Token range within `MoleculeSequence::tokens`, terminator excluded.
    pub start: usize,
    pub end: usize,
    pub termination: Termination,
}

impl Segment {
    pub fn is_valid(&self) -> bool {
        self.canonical.is_some()
    }
}

/// Several molecules generated as one separator-delimited stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeSequence {
    pub prompt: Vec<TokenId>,
    /// Generated tokens after the prompt.
    pub tokens: Vec<TokenId>,
    pub segments: Vec<Segment>,
}

impl MoleculeSequence {
    pub fn raw_texts(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.raw.clone()).collect()
    }

    pub fn truncated(&self) -> bool {
        self.segments
            .last()
            .is_some_and(|s| s.termination == Termination::MaxTokens)
    }
}
