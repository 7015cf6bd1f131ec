use std::collections::HashMap;

use super::MetricsError;
use crate::policy::TokenId;

/// Substituted for a zero modified n-gram precision.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const BLEU_MAX_ORDER: usize = 4;

fn counts(seq: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut m = HashMap::new();
    for w in seq.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Sentence BLEU with uniform weights over orders `1..=N`, where
/// `N = min(4, |candidate|, |reference|)`, clipped n-gram precision and
/// brevity penalty.
pub fn bleu(candidate: &[TokenId], reference: &[TokenId]) -> Result<f64, MetricsError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let order = BLEU_MAX_ORDER.min(candidate.len()).min(reference.len());
    let mut log_sum = 0.0;
    for n in 1..=order {
        let cand = counts(candidate, n);
        let refc = counts(reference, n);
        let hits: usize = cand
            .iter()
            .map(|(g, &k)| k.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let total = candidate.len() + 1 - n;
        let p = hits as f64 / total as f64;
        log_sum += if p > 0.0 { p.ln() } else { BLEU_EPSILON.ln() };
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok((brevity * (log_sum / order as f64).exp()).clamp(0.0, 1.0))
}
