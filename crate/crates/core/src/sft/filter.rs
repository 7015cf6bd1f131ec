use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PromptSpec, SftError};
use crate::decoding::{beam_search, DecodeError};
use crate::fingerprints::{default_fingerprint, tanimoto, Fingerprint};
use crate::policy::Policy;
use crate::smiles::{canonicalize, compute_properties, parse_smiles, CanonicalSmiles};

/// Similarity bound of the hard filtering ablation.
pub const HARD_FILTER_THRESHOLD: f64 = 0.65;
pub const DEFAULT_MAX_K: usize = 50;
pub const DEFAULT_COLLECT_WIDTH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FilterMode {
    Standard,
    /// Also drops any molecule with similarity `>= threshold` to one
    /// already kept.
    Hard { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredMolecule {
    pub raw: String,
    pub canonical: CanonicalSmiles,
}

/// Beam search of width `t` on each description prompt. Prompts are decoded
/// in parallel; results keep prompt order.
pub fn collect(
    policy: &Policy,
    prompts: &[PromptSpec],
    t: usize,
    max_tokens: usize,
) -> Vec<Result<Vec<String>, DecodeError>> {
    prompts
        .par_iter()
        .map(|p| {
            let hyps = beam_search(policy, &p.desc_tokens(&policy.vocab), t, max_tokens)?;
            Ok(hyps.into_iter().map(|h| h.text).collect())
        })
        .collect()
}

/// Keeps valid, first-seen, prompt-satisfying molecules in input order, then
/// applies the hard-mode similarity filter and the `max_k` cap.
pub fn filter(
    raws: &[String],
    prompt: &PromptSpec,
    mode: FilterMode,
    max_k: usize,
) -> Result<Vec<FilteredMolecule>, SftError> {
    let mut seen = HashSet::new();
    let mut kept: Vec<(FilteredMolecule, Fingerprint)> = Vec::new();
    for raw in raws {
        if kept.len() == max_k {
            break;
        }
        let Ok(graph) = parse_smiles(raw) else {
            continue;
        };
        let canonical = canonicalize(&graph);
        if !seen.insert(canonical.clone()) || !prompt.is_satisfied(&compute_properties(&graph)) {
            continue;
        }
        let fp = default_fingerprint(&graph);
        if let FilterMode::Hard { threshold } = mode {
            let mut close = false;
            for (_, other) in &kept {
                if tanimoto(&fp, other)? >= threshold {
                    close = true;
                    break;
                }
            }
            if close {
                continue;
            }
        }
        kept.push((
            FilteredMolecule {
                raw: raw.clone(),
                canonical,
            },
            fp,
        ));
    }
    if kept.is_empty() {
        return Err(SftError::EmptyAfterFilter(prompt.id()));
    }
    Ok(kept.into_iter().map(|(m, _)| m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PropertyConstraint, PropertyFamily};

    fn hbd(level: u32) -> PromptSpec {
        PromptSpec::new(vec![PropertyConstraint::new(PropertyFamily::Hbd, level)])
    }

    fn strings(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn spellings_collapse_and_invalid_dropped() {
        let out = filter(&strings(&["CCO", "C(", "OCC", "CCN"]), &hbd(1), FilterMode::Standard, 50).unwrap();
        let raws: Vec<_> = out.iter().map(|m| m.raw.as_str()).collect();
        assert_eq!(raws, ["CCO", "CCN"]);
    }

    #[test]
    fn prompt_mismatch_dropped() {
        let out = filter(&strings(&["CCC", "CCO"]), &hbd(1), FilterMode::Standard, 50).unwrap();
        assert_eq!(out.len(), 1);
        assert!(matches!(
            filter(&strings(&["CCC"]), &hbd(1), FilterMode::Standard, 50),
            Err(SftError::EmptyAfterFilter(_))
        ));
    }

    #[test]
    fn hard_mode_drops_later_similar_member() {
        let a = "CCCCCCCCCCO";
        let b = "CCCCCCCCCCCO";
        let fa = default_fingerprint(&parse_smiles(a).unwrap());
        let fb = default_fingerprint(&parse_smiles(b).unwrap());
        assert!(tanimoto(&fa, &fb).unwrap() >= HARD_FILTER_THRESHOLD);
        let hard = FilterMode::Hard {
            threshold: HARD_FILTER_THRESHOLD,
        };
        let out = filter(&strings(&[a, b, "c1ccccc1O"]), &hbd(1), hard, 50).unwrap();
        let raws: Vec<_> = out.iter().map(|m| m.raw.as_str()).collect();
        assert_eq!(raws, [a, "c1ccccc1O"]);
    }

    #[test]
    fn cap_and_idempotence() {
        let raws = strings(&["CCO", "CCCO", "CCCCO", "OCC", "NC", "CCCCCO"]);
        for mode in [FilterMode::Standard, FilterMode::Hard { threshold: 0.65 }] {
            let once = filter(&raws, &hbd(1), mode, 3).unwrap();
            assert!(once.len() <= 3);
            let again: Vec<String> = once.iter().map(|m| m.raw.clone()).collect();
            assert_eq!(filter(&again, &hbd(1), mode, 3).unwrap(), once);
        }
    }
}
