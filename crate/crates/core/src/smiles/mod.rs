//! SMILES subset: parsing, valence validation, canonical writing and simple
//! property counts.
//!
//! Supported: organic-subset atoms `B C N O P S F Cl Br I`, aromatic
//! `b c n o p s`, bracket atoms with explicit hydrogens and charge, bond
//! symbols `- = #`, branches and ring closures (including `%nn`).
//! Stereochemistry, isotopes, wildcards and multi-fragment input are rejected.

mod canon;
mod graph;
mod parser;
mod properties;

pub use canon::{canonical_ranks, canonicalize, write_randomized, CanonicalSmiles};
pub use graph::{Atom, Bond, BondOrder, Element, MolecularGraph};
pub use parser::parse_smiles;
pub use properties::{compute_properties, PropertyVector};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("valence error on atom {atom}: {message}")]
    Valence { atom: usize, message: String },
    #[error("unsupported feature at position {position}: {feature}")]
    Unsupported { position: usize, feature: String },
}

impl SmilesError {
    pub(crate) fn syntax(position: usize, message: impl Into<String>) -> Self {
        SmilesError::Syntax {
            position,
            message: message.into(),
        }
    }

    pub(crate) fn unsupported(position: usize, feature: impl Into<String>) -> Self {
        SmilesError::Unsupported {
            position,
            feature: feature.into(),
        }
    }
}

/// Parse and canonicalize in one step; the usual entry point for dedup keys.
pub fn canonical_smiles(text: &str) -> Result<CanonicalSmiles, SmilesError> {
    parse_smiles(text).map(|g| canonicalize(&g))
}
