//! The trainable autoregressive token model: vocabulary, GRU forward pass
//! with value head, exact gradients, Adam, and checkpoints.

mod checkpoint;
mod model;
mod params;
mod vocab;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use model::{
    backward, encode, forward, forward_from, initial_hidden, log_softmax, loss, loss_and_grad,
    softmax, step, ForwardTrace, OutputGrads, Reduction, SequenceExample, StepOutput,
};
pub use params::{Adam, AdamConfig, Block, Gradients, ModelDims, PolicyParameters};
pub use vocab::{
    heavy_bucket, prompt_token_text, PropertyConstraint, PropertyFamily, TokenId, Vocabulary, BOS,
    DIVERSE, EOS, HEAVY_BUCKETS, PAD, SEP,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown token at byte {position}")]
    UnknownToken { position: usize },
    #[error("non-finite loss or gradient")]
    NonFiniteLoss,
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint vocabulary {found:016x} does not match {expected:016x}")]
    VocabularyMismatch { expected: u64, found: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_D_EMB: usize = 64;
pub const DEFAULT_D_H: usize = 128;

/// A parameter set bundled with the vocabulary it was trained against.
#[derive(Debug, Clone)]
pub struct Policy {
    pub vocab: Vocabulary,
    pub params: PolicyParameters,
}

impl Policy {
    pub fn new(vocab: Vocabulary, params: PolicyParameters) -> Self {
        assert_eq!(vocab.len(), params.dims().vocab);
        Policy { vocab, params }
    }
}
