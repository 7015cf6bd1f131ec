use rand::Rng;

use super::{DecodeConfig, DecodeError, Decoded, MoleculeSequence, Scheme, Segment, Termination};
use crate::policy::{log_softmax, softmax, step, Policy, PolicyParameters, TokenId, Vocabulary};
use crate::smiles::canonical_smiles;

/// Token-level sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    Temperature(f64),
    Nucleus { temperature: f64, top_p: f64 },
}

impl Sampler {
    /// Draws one token with a single uniform variate. Kept tokens are scanned
    /// in id order against `u` times their total mass, which equals sampling
    /// from the renormalized distribution.
    pub fn choose<R: Rng + ?Sized>(&self, logits: &[f64], rng: &mut R) -> TokenId {
        let (temperature, top_p) = match *self {
            Sampler::Temperature(t) => (t, 1.0),
            Sampler::Nucleus { temperature, top_p } => (temperature, top_p),
        };
        let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        let probs = softmax(&scaled);
        let mut keep = vec![true; probs.len()];
        if top_p < 1.0 {
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            keep.iter_mut().for_each(|k| *k = false);
            let mut cum = 0.0;
            for &i in &order {
                keep[i] = true;
                cum += probs[i];
                if cum >= top_p {
                    break;
                }
            }
        }
        let u: f64 = rng.gen();
        let total: f64 = probs
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(p, _)| p)
            .sum();
        let target = u * total;
        let mut cum = 0.0;
        let mut last = None;
        for (i, (&p, &k)) in probs.iter().zip(&keep).enumerate() {
            if !k || p <= 0.0 {
                continue;
            }
            cum += p;
            last = Some(i);
            if target < cum {
                return i as TokenId;
            }
        }
        last.expect("distribution has mass") as TokenId
    }
}

/// Highest log-probability token, lowest id on ties.
pub(crate) fn argmax(log_probs: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &x) in log_probs.iter().enumerate() {
        if x > log_probs[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Hidden state and next-token logits after consuming the prompt.
pub(crate) fn prime(p: &PolicyParameters, prompt: &[TokenId]) -> (Vec<f64>, Vec<f64>) {
    assert!(!prompt.is_empty(), "prompt must contain at least BOS");
    let mut h = crate::policy::initial_hidden(p);
    let mut logits = Vec::new();
    for &t in prompt {
        let out = step(p, &h, t);
        h = out.hidden;
        logits = out.logits;
    }
    (h, logits)
}

/// Generated tokens (terminators included) and their summed log-probability.
fn decode_stream(
    p: &PolicyParameters,
    prompt: &[TokenId],
    max_segments: usize,
    max_tokens: usize,
    mut choose: impl FnMut(&[f64]) -> TokenId,
) -> (Vec<TokenId>, f64) {
    let (mut h, mut logits) = prime(p, prompt);
    let mut out = Vec::new();
    let mut log_prob = 0.0;
    let mut segments = 0;
    let mut seg_len = 0;
    loop {
        if seg_len == max_tokens {
            break;
        }
        let tok = choose(&logits);
        log_prob += log_softmax(&logits)[tok as usize];
        out.push(tok);
        match Termination::of(tok) {
            Some(Termination::End) => break,
            Some(_) => {
                segments += 1;
                seg_len = 0;
                if segments == max_segments {
                    break;
                }
            }
            None => seg_len += 1,
        }
        let s = step(p, &h, tok);
        h = s.hidden;
        logits = s.logits;
    }
    (out, log_prob)
}

fn single(
    policy: &Policy,
    prompt: &[TokenId],
    max_tokens: usize,
    choose: impl FnMut(&[f64]) -> TokenId,
) -> Decoded {
    let (mut tokens, log_prob) = decode_stream(&policy.params, prompt, 1, max_tokens, choose);
    let termination = match tokens.last().and_then(|&t| Termination::of(t)) {
        Some(t) => {
            tokens.pop();
            t
        }
        None => Termination::MaxTokens,
    };
    Decoded {
        text: policy.vocab.detokenize(&tokens),
        tokens,
        log_prob,
        termination,
    }
}

/// Argmax decoding of one molecule.
pub fn greedy(policy: &Policy, prompt: &[TokenId], max_tokens: usize) -> Decoded {
    single(policy, prompt, max_tokens, |l| argmax(&log_softmax(l)))
}

/// Sampling of one molecule; stops at the first separator or end token.
pub fn sample<R: Rng + ?Sized>(
    policy: &Policy,
    prompt: &[TokenId],
    sampler: Sampler,
    max_tokens: usize,
    rng: &mut R,
) -> Decoded {
    single(policy, prompt, max_tokens, |l| sampler.choose(l, rng))
}

/// Splits a generated stream at separators and end tokens. A trailing piece
/// without a terminator is kept as a truncated, invalid segment.
pub fn split_segments(vocab: &Vocabulary, tokens: &[TokenId]) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut start = 0;
    for (i, &t) in tokens.iter().enumerate() {
        if let Some(termination) = Termination::of(t) {
            let raw = vocab.detokenize(&tokens[start..i]);
            segments.push(Segment {
                canonical: canonical_smiles(&raw).ok(),
                raw,
                start,
                end: i,
                termination,
            });
            start = i + 1;
            if termination == Termination::End {
                return segments;
            }
        }
    }
    if start < tokens.len() {
        segments.push(Segment {
            raw: vocab.detokenize(&tokens[start..]),
            canonical: None,
            start,
            end: tokens.len(),
            termination: Termination::MaxTokens,
        });
    }
    segments
}

/// Decodes up to `k` molecules as one stream after `prompt`. Stops at the
/// `k`-th separator, an end token, or when one segment reaches
/// `cfg.max_tokens`. Only greedy and sampling schemes apply.
pub fn generate_sequence<R: Rng + ?Sized>(
    policy: &Policy,
    prompt: &[TokenId],
    k: usize,
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<MoleculeSequence, DecodeError> {
    cfg.validate()?;
    if k == 0 {
        return Err(DecodeError::InvalidConfig("k must be at least 1".into()));
    }
    let (tokens, _) = match cfg.scheme {
        Scheme::Greedy => decode_stream(&policy.params, prompt, k, cfg.max_tokens, |l| {
            argmax(&log_softmax(l))
        }),
        Scheme::Temperature | Scheme::Nucleus => {
            let sampler = cfg.sampler();
            decode_stream(&policy.params, prompt, k, cfg.max_tokens, |l| {
                sampler.choose(l, rng)
            })
        }
        other => {
            return Err(DecodeError::InvalidConfig(format!(
                "{} cannot generate a molecule sequence",
                other.name()
            )))
        }
    };
    Ok(MoleculeSequence {
        prompt: prompt.to_vec(),
        segments: split_segments(&policy.vocab, &tokens),
        tokens,
    })
}
