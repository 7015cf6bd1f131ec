use std::fmt;

use serde::{Deserialize, Serialize};

use crate::metrics::AcceptanceSpec;
use crate::policy::{PropertyConstraint, PropertyFamily, TokenId, Vocabulary, BOS, DIVERSE};
use crate::smiles::{CanonicalSmiles, PropertyVector};

/// A property-conditioned generation request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptSpec {
    /// Sorted by family, at most one per family.
    pub constraints: Vec<PropertyConstraint>,
    /// A corpus molecule satisfying the constraints, used for BLEU-based
    /// scores (Top-10 and packing order).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<CanonicalSmiles>,
}

impl PromptSpec {
    pub fn new(mut constraints: Vec<PropertyConstraint>) -> Self {
        constraints.sort();
        constraints.dedup_by_key(|c| c.family);
        PromptSpec {
            constraints,
            reference: None,
        }
    }

    pub fn with_reference(mut self, reference: CanonicalSmiles) -> Self {
        self.reference = Some(reference);
        self
    }

    /// Stable identifier such as `HBD=1,HBA=2`.
    pub fn id(&self) -> String {
        self.constraints
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn families(&self) -> impl Iterator<Item = PropertyFamily> + '_ {
        self.constraints.iter().map(|c| c.family)
    }

    pub fn involves(&self, family: PropertyFamily) -> bool {
        self.families().any(|f| f == family)
    }

    pub fn is_satisfied(&self, props: &PropertyVector) -> bool {
        self.constraints.iter().all(|c| c.is_satisfied(props))
    }

    pub fn acceptance(&self) -> AcceptanceSpec {
        AcceptanceSpec::Predicate {
            constraints: self.constraints.clone(),
        }
    }

    /// `BOS` followed by one token per constraint.
    pub fn desc_tokens(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        let mut out = vec![BOS];
        for c in &self.constraints {
            out.push(
                vocab
                    .prompt_token(c.family, c.level)
                    .expect("constraint levels are validated against the vocabulary"),
            );
        }
        out
    }

    /// The description prompt followed by the diversity marker.
    pub fn desc_div_tokens(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        let mut out = self.desc_tokens(vocab);
        out.push(DIVERSE);
        out
    }

    /// Whether every constraint has a prompt token.
    pub fn is_representable(&self, vocab: &Vocabulary) -> bool {
        self.constraints
            .iter()
            .all(|c| vocab.prompt_token(c.family, c.level).is_some())
    }
}

impl fmt::Display for PromptSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering() {
        let v = Vocabulary::standard();
        let p = PromptSpec::new(vec![
            PropertyConstraint::new(PropertyFamily::Hba, 2),
            PropertyConstraint::new(PropertyFamily::Hbd, 1),
        ]);
        assert_eq!(p.id(), "HBD=1,HBA=2");
        let toks = p.desc_div_tokens(&v);
        assert_eq!(toks.len(), 4);
        assert_eq!(toks[0], BOS);
        assert_eq!(v.text(toks[1]), "<HBD=1>");
        assert_eq!(*toks.last().unwrap(), DIVERSE);
        assert_eq!(p.desc_tokens(&v), toks[..3]);
    }
}
