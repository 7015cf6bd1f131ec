use super::sampling::prime;
use super::{DecodeError, Decoded, Termination};
use crate::policy::{log_softmax, step, Policy, PolicyParameters, TokenId};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Candidate score: `(1 - alpha) * p - alpha * penalty`.
pub(crate) fn contrastive_score(prob: f64, penalty: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * prob - alpha * penalty
}

fn decode_one(
    policy: &Policy,
    prompt: &[TokenId],
    width: usize,
    alpha: f64,
    max_tokens: usize,
    context: &mut Vec<Vec<f64>>,
) -> Decoded {
    let p: &PolicyParameters = &policy.params;
    let (mut h, mut logits) = prime(p, prompt);
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_tokens {
        let lp = log_softmax(&logits);
        let mut order: Vec<usize> = (0..lp.len()).collect();
        order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
        order.truncate(width);
        let mut best: Option<(f64, usize, crate::policy::StepOutput)> = None;
        for &v in &order {
            let out = step(p, &h, v as TokenId);
            let penalty = context
                .iter()
                .map(|c| cosine(&out.hidden, c))
                .fold(f64::NEG_INFINITY, f64::max);
            let penalty = if penalty.is_finite() { penalty } else { 0.0 };
            let s = contrastive_score(lp[v].exp(), penalty, alpha);
            if best.as_ref().map_or(true, |(bs, _, _)| s > *bs) {
                best = Some((s, v, out));
            }
        }
        let (_, v, out) = best.expect("width >= 1");
        let tok = v as TokenId;
        log_prob += lp[v];
        if let Some(termination) = Termination::of(tok) {
            return Decoded {
                text: policy.vocab.detokenize(&tokens),
                tokens,
                log_prob,
                termination,
            };
        }
        tokens.push(tok);
        context.push(out.hidden.clone());
        h = out.hidden;
        logits = out.logits;
    }
    Decoded {
        text: policy.vocab.detokenize(&tokens),
        tokens,
        log_prob,
        termination: Termination::MaxTokens,
    }
}

fn prompt_context(p: &PolicyParameters, prompt: &[TokenId]) -> Vec<Vec<f64>> {
    let mut h = crate::policy::initial_hidden(p);
    prompt
        .iter()
        .map(|&t| {
            h = step(p, &h, t).hidden;
            h.clone()
        })
        .collect()
}

fn check(width: usize, alpha: f64) -> Result<(), DecodeError> {
    if width == 0 {
        return Err(DecodeError::InvalidConfig(
            "width must be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DecodeError::InvalidConfig(format!(
            "penalty_alpha {alpha} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Contrastive search over the `width` most probable next tokens, penalizing
/// hidden states similar to any earlier one.
pub fn contrastive_beam_search(
    policy: &Policy,
    prompt: &[TokenId],
    width: usize,
    alpha: f64,
    max_tokens: usize,
) -> Result<Decoded, DecodeError> {
    check(width, alpha)?;
    let mut context = prompt_context(&policy.params, prompt);
    Ok(decode_one(
        policy,
        prompt,
        width,
        alpha,
        max_tokens,
        &mut context,
    ))
}

/// `n` contrastive decodes from one prompt. Hidden states of earlier
/// molecules stay in the penalty context, so later molecules are pushed
/// away from them.
pub fn contrastive_search_many(
    policy: &Policy,
    prompt: &[TokenId],
    width: usize,
    alpha: f64,
    n: usize,
    max_tokens: usize,
) -> Result<Vec<Decoded>, DecodeError> {
    check(width, alpha)?;
    let mut context = prompt_context(&policy.params, prompt);
    Ok((0..n)
        .map(|_| decode_one(policy, prompt, width, alpha, max_tokens, &mut context))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::greedy;
    use crate::policy::{Block, ModelDims, Vocabulary, BOS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(seed: u64) -> Policy {
        let vocab = Vocabulary::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = PolicyParameters::init(ModelDims::new(vocab.len(), 8, 16), &mut rng);
        params
            .block_mut(Block::WOut)
            .iter_mut()
            .for_each(|w| *w *= 40.0);
        Policy::new(vocab, params)
    }

    #[test]
    fn alpha_zero_is_greedy() {
        for seed in 0..6 {
            let pol = policy(seed);
            let g = greedy(&pol, &[BOS], 25);
            let c = contrastive_beam_search(&pol, &[BOS], 5, 0.0, 25).unwrap();
            assert_eq!(c.tokens, g.tokens);
            for d in contrastive_search_many(&pol, &[BOS], 5, 0.0, 3, 25).unwrap() {
                assert_eq!(d.tokens, g.tokens);
            }
        }
    }

    #[test]
    fn score_decreases_with_penalty() {
        for alpha in [0.1, 0.5, 0.9] {
            assert!(contrastive_score(0.4, 0.2, alpha) > contrastive_score(0.4, 0.6, alpha));
        }
    }

    #[test]
    fn cosine_bounds() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        assert!(contrastive_beam_search(&policy(0), &[BOS], 3, 1.5, 10).is_err());
    }
}
