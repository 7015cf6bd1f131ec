use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{training_sequence, SftDataset};
use super::{PromptSpec, SftError};
use crate::decoding::{sample, Sampler};
use crate::policy::{
    loss, loss_and_grad, Adam, AdamConfig, ModelDims, Policy, PolicyError, PolicyParameters, PropertyConstraint,
    PropertyFamily, Reduction, SequenceExample, Vocabulary, EOS,
};
use crate::smiles::{canonical_smiles, CanonicalSmiles, PropertyVector};

/// Smallest corpus `pretrain` accepts.
pub const MIN_PRETRAIN_CORPUS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMolecule {
    pub smiles: CanonicalSmiles,
    pub properties: PropertyVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of optimizer steps spent in linear warm-up.
    pub warmup_ratio: f64,
    /// Cosine decay after warm-up; constant rate otherwise.
    pub cosine: bool,
    pub heldout_fraction: f64,
    pub max_grad_norm: Option<f64>,
    /// Shuffle molecule order inside each SFT sequence every epoch.
    pub shuffle_molecules: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 8,
            learning_rate: 5e-4,
            warmup_ratio: 0.05,
            cosine: true,
            heldout_fraction: 0.1,
            max_grad_norm: Some(1.0),
            shuffle_molecules: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn learning_rate_at(&self, step: usize, total: usize) -> f64 {
        let warmup = ((self.warmup_ratio * total as f64).ceil() as usize).min(total);
        if step < warmup {
            return self.learning_rate * (step + 1) as f64 / warmup as f64;
        }
        if !self.cosine || total <= warmup {
            return self.learning_rate;
        }
        let progress = (step - warmup) as f64 / (total - warmup) as f64;
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Token-weighted mean of the minibatch losses seen during the epoch.
    pub train_loss: f64,
    pub heldout_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest held-out loss, or of the last
    /// epoch when nothing is held out.
    pub params: PolicyParameters,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

fn weight_sum(batch: &[SequenceExample]) -> f64 {
    batch.iter().flat_map(|e| &e.weights).sum()
}

fn fit(
    mut params: PolicyParameters,
    cfg: &TrainConfig,
    mut epoch_examples: impl FnMut(&mut ChaCha8Rng) -> Vec<SequenceExample>,
    heldout: &[SequenceExample],
) -> Result<TrainOutcome, SftError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5f7_u64);
    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        max_grad_norm: cfg.max_grad_norm,
        ..Default::default()
    };
    let mut opt = Adam::new(adam_cfg, &params);
    let batch_size = cfg.batch_size.max(1);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, PolicyParameters)> = None;
    let mut step = 0;
    let mut total_steps = None;
    for epoch in 0..cfg.epochs {
        let mut examples = epoch_examples(&mut rng);
        examples.shuffle(&mut rng);
        let total = *total_steps.get_or_insert(cfg.epochs * examples.len().div_ceil(batch_size));
        let (mut loss_sum, mut weight) = (0.0, 0.0);
        for batch in examples.chunks(batch_size) {
            let (l, g) = loss_and_grad(&params, batch, Reduction::PerToken).map_err(|e| match e {
                PolicyError::NonFiniteLoss => SftError::NonFiniteLoss { epoch, step },
                other => other.into(),
            })?;
            let w = weight_sum(batch);
            loss_sum += l * w;
            weight += w;
            opt.config.learning_rate = cfg.learning_rate_at(step, total);
            opt.step(&mut params, &g);
            step += 1;
        }
        let train_loss = if weight > 0.0 { loss_sum / weight } else { 0.0 };
        let heldout_loss = (!heldout.is_empty()).then(|| loss(&params, heldout, Reduction::PerToken));
        log::debug!("epoch {epoch}: train {train_loss:.4} heldout {heldout_loss:?}");
        history.push(EpochStats {
            epoch,
            train_loss,
            heldout_loss,
        });
        let score = heldout_loss.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |(b, _, _)| score < *b || heldout_loss.is_none()) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params, 0),
    };
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

/// Splits `n` items into (train, heldout) index lists.
fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let h = if n >= 5 {
        ((fraction * n as f64).round() as usize).clamp(usize::from(fraction > 0.0), n - 1)
    } else {
        0
    };
    let heldout = idx.split_off(n - h);
    (idx, heldout)
}

/// Prompt for one corpus molecule: one or two of its property families.
fn pretrain_prompt<R: Rng + ?Sized>(props: &PropertyVector, rng: &mut R) -> PromptSpec {
    let mut families: Vec<PropertyFamily> = PropertyFamily::ALL
        .into_iter()
        .filter(|f| f.level(props).is_some())
        .collect();
    families.shuffle(rng);
    families.truncate(rng.gen_range(1..=2));
    PromptSpec::new(
        families
            .into_iter()
            .map(|f| PropertyConstraint::new(f, f.level(props).expect("filtered")))
            .collect(),
    )
}

fn pretrain_example<R: Rng + ?Sized>(
    vocab: &Vocabulary,
    m: &CorpusMolecule,
    rng: &mut R,
) -> Result<SequenceExample, SftError> {
    let mut tokens = pretrain_prompt(&m.properties, rng).desc_tokens(vocab);
    let prompt_len = tokens.len();
    tokens.extend(vocab.tokenize(m.smiles.as_str())?);
    tokens.push(EOS);
    let weights = (0..tokens.len() - 1)
        .map(|t| if t + 1 >= prompt_len { 1.0 } else { 0.0 })
        .collect();
    Ok(SequenceExample::new(tokens, weights))
}

/// Trains a fresh policy on `BOS ‖ prompt ‖ molecule ‖ EOS` sequences.
pub fn pretrain(
    vocab: &Vocabulary,
    corpus: &[CorpusMolecule],
    dims: ModelDims,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, SftError> {
    if corpus.len() < MIN_PRETRAIN_CORPUS {
        return Err(SftError::CorpusTooSmall {
            found: corpus.len(),
            required: MIN_PRETRAIN_CORPUS,
        });
    }
    let (train, heldout) = split_indices(corpus.len(), cfg.heldout_fraction, cfg.seed);
    let mut held_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe7a1);
    let heldout: Vec<SequenceExample> = heldout
        .iter()
        .map(|&i| pretrain_example(vocab, &corpus[i], &mut held_rng))
        .collect::<Result<_, _>>()?;
    // Validate tokenization once so the epoch closure cannot fail.
    for &i in &train {
        vocab.tokenize(corpus[i].smiles.as_str())?;
    }
    let init = PolicyParameters::init(dims, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    fit(
        init,
        cfg,
        |rng| {
            train
                .iter()
                .map(|&i| pretrain_example(vocab, &corpus[i], rng).expect("tokenization checked"))
                .collect()
        },
        &heldout,
    )
}

/// Supervised fine-tuning on concatenated molecule sequences.
pub fn train_sft(init: &Policy, dataset: &SftDataset, cfg: &TrainConfig) -> Result<TrainOutcome, SftError> {
    if dataset.is_empty() {
        return Err(SftError::Dataset("empty dataset".into()));
    }
    let vocab = &init.vocab;
    let (train, heldout) = split_indices(dataset.len(), cfg.heldout_fraction, cfg.seed);
    let sequence = |i: usize, shuffle: Option<&mut ChaCha8Rng>| {
        let r = &dataset.records[i];
        let mut mols: Vec<&str> = r.molecules.iter().map(|m| m.raw.as_str()).collect();
        if let Some(rng) = shuffle {
            mols.shuffle(rng);
        }
        training_sequence(vocab, &r.prompt, &mols)
    };
    let heldout: Vec<SequenceExample> = heldout.iter().map(|&i| sequence(i, None)).collect::<Result<_, _>>()?;
    for &i in &train {
        sequence(i, None)?;
    }
    fit(
        init.params.clone(),
        cfg,
        |rng| {
            train
                .iter()
                .map(|&i| {
                    let shuffle = cfg.shuffle_molecules.then_some(&mut *rng);
                    sequence(i, shuffle).expect("tokenization checked")
                })
                .collect()
        },
        &heldout,
    )
}

/// Fraction of single-molecule samples that parse, over `n` samples per
/// prompt.
pub fn sample_validity(policy: &Policy, prompts: &[PromptSpec], n: usize, temperature: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut valid = 0;
    let mut total = 0;
    for p in prompts {
        let toks = p.desc_tokens(&policy.vocab);
        for _ in 0..n {
            let d = sample(policy, &toks, Sampler::Temperature(temperature), 96, &mut rng);
            total += 1;
            if canonical_smiles(&d.text).is_ok() {
                valid += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        valid as f64 / total as f64
    }
}
