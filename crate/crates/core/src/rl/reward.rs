use serde::{Deserialize, Serialize};

use super::RlError;
use crate::fingerprints::{tanimoto, Fingerprint};
use crate::metrics::AcceptanceSpec;
use crate::policy::Vocabulary;
use crate::sft::PromptSpec;
use crate::smiles::CanonicalSmiles;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    BleuVsReference,
    PropertyPredicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Exponent on the match score.
    pub alpha: f64,
    /// Exponent on the maximum similarity to earlier molecules.
    pub beta: f64,
    pub reward_scale: f64,
    pub match_mode: MatchMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.5,
            beta: 2.0,
            reward_scale: 8.0,
            match_mode: MatchMode::PropertyPredicate,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RlError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// The acceptance rule the match reward is computed against.
    pub fn acceptor(&self, prompt: &PromptSpec) -> Result<AcceptanceSpec, RlError> {
        match self.match_mode {
            MatchMode::PropertyPredicate => Ok(prompt.acceptance()),
            MatchMode::BleuVsReference => match &prompt.reference {
                Some(r) => Ok(AcceptanceSpec::Reference {
                    reference: r.clone(),
                }),
                None => Err(RlError::MissingReference(prompt.id())),
            },
        }
    }
}

/// `score^alpha`.
pub fn match_from_score(score: f64, alpha: f64) -> f64 {
    score.clamp(0.0, 1.0).powf(alpha)
}

/// `1 - max_similarity^beta`.
pub fn div_from_similarity(max_similarity: f64, beta: f64) -> f64 {
    1.0 - max_similarity.clamp(0.0, 1.0).powf(beta)
}

/// BLEU against the reference raised to `alpha`, or 1/0 for a predicate.
pub fn reward_match(
    vocab: &Vocabulary,
    molecule: &CanonicalSmiles,
    acceptor: &AcceptanceSpec,
    alpha: f64,
) -> Result<f64, RlError> {
    let (accepted, score) = acceptor.judge(vocab, molecule)?;
    Ok(match acceptor {
        AcceptanceSpec::Reference { .. } => match_from_score(score, alpha),
        AcceptanceSpec::Predicate { .. } => f64::from(u8::from(accepted)),
    })
}

/// Zero for the first molecule of a sequence (empty `previous`).
pub fn reward_div(
    molecule: &Fingerprint,
    previous: &[Fingerprint],
    beta: f64,
) -> Result<f64, RlError> {
    if previous.is_empty() {
        return Ok(0.0);
    }
    let mut max = 0.0f64;
    for p in previous {
        max = max.max(tanimoto(molecule, p)?);
    }
    Ok(div_from_similarity(max, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprints::default_fingerprint;
    use crate::policy::{PropertyConstraint, PropertyFamily};
    use crate::smiles::{canonical_smiles, parse_smiles};

    fn fp(s: &str) -> Fingerprint {
        default_fingerprint(&parse_smiles(s).unwrap())
    }

    #[test]
    fn first_molecule_has_no_diversity_reward() {
        assert_eq!(reward_div(&fp("CCO"), &[], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn duplicate_has_no_diversity_reward() {
        let prev = [fp("CCCC"), fp("OCC")];
        assert_eq!(reward_div(&fp("CCO"), &prev, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn formula_arithmetic() {
        assert_eq!(div_from_similarity(0.5, 2.0), 0.75);
        assert!((match_from_score(0.49, 0.5) - 0.7).abs() < 1e-12);
        assert_eq!(match_from_score(1.0, 0.5), 1.0);
    }

    #[test]
    fn rewards_stay_in_unit_interval() {
        let prev = [fp("c1ccccc1"), fp("CC(=O)O")];
        for s in ["CCO", "c1ccccc1C", "CC(=O)N", "C1CCCCC1"] {
            let r = reward_div(&fp(s), &prev, 2.0).unwrap();
            assert!((0.0..=1.0).contains(&r), "{s}: {r}");
        }
    }

    #[test]
    fn match_modes() {
        let v = Vocabulary::standard();
        let m = canonical_smiles("NCC(N)CO").unwrap();
        let pred = AcceptanceSpec::Predicate {
            constraints: vec![PropertyConstraint::new(PropertyFamily::Hbd, 3)],
        };
        assert_eq!(reward_match(&v, &m, &pred, 0.5).unwrap(), 1.0);
        let miss = AcceptanceSpec::Predicate {
            constraints: vec![PropertyConstraint::new(PropertyFamily::Hbd, 2)],
        };
        assert_eq!(reward_match(&v, &m, &miss, 0.5).unwrap(), 0.0);
        let same = AcceptanceSpec::Reference {
            reference: m.clone(),
        };
        assert_eq!(reward_match(&v, &m, &same, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn bleu_mode_needs_a_reference() {
        let cfg = RewardConfig {
            match_mode: MatchMode::BleuVsReference,
            ..RewardConfig::default()
        };
        let p = PromptSpec::new(vec![PropertyConstraint::new(PropertyFamily::Hbd, 1)]);
        assert!(matches!(cfg.acceptor(&p), Err(RlError::MissingReference(_))));
        let p = p.with_reference(canonical_smiles("CCO").unwrap());
        assert!(cfg.acceptor(&p).is_ok());
    }

    #[test]
    fn invalid_exponents_rejected() {
        let cfg = RewardConfig {
            beta: 0.0,
            ..RewardConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
