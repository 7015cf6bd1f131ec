use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::policy::{PropertyConstraint, PropertyFamily};
use crate::sft::{CorpusMolecule, PromptSpec};
use crate::smiles::{canonicalize, compute_properties, parse_smiles};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    /// 1-based.
    pub line: usize,
    pub text: String,
    pub reason: String,
}

/// Molecule counts per family level.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyIndex {
    pub histograms: BTreeMap<PropertyFamily, BTreeMap<u32, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    /// Unique molecules in first-occurrence order.
    pub molecules: Vec<CorpusMolecule>,
    pub rejected: Vec<RejectedLine>,
    pub duplicates: usize,
    pub index: PropertyIndex,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn matching<'a>(&'a self, prompt: &'a PromptSpec) -> impl Iterator<Item = &'a CorpusMolecule> + 'a {
        self.molecules.iter().filter(move |m| prompt.is_satisfied(&m.properties))
    }

    pub fn count_matching(&self, constraints: &[PropertyConstraint]) -> usize {
        self.molecules
            .iter()
            .filter(|m| constraints.iter().all(|c| c.is_satisfied(&m.properties)))
            .count()
    }

    /// Canonical SMILES, one per line.
    pub fn to_smi(&self) -> String {
        let mut out = String::new();
        for m in &self.molecules {
            out.push_str(m.smiles.as_str());
            out.push('\n');
        }
        out
    }
}

/// Parses, canonicalizes and deduplicates SMILES lines. Blank lines and
/// lines starting with `#` are skipped; anything after the first whitespace
/// on a line is ignored.
pub fn ingest_text(text: &str, min_size: usize) -> Result<Corpus, HarnessError> {
    let mut molecules = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    let mut duplicates = 0;
    let mut index = PropertyIndex::default();
    for (i, line) in text.lines().enumerate() {
        let Some(token) = line.split_whitespace().next() else {
            continue;
        };
        if token.starts_with('#') {
            continue;
        }
        let graph = match parse_smiles(token) {
            Ok(g) => g,
            Err(e) => {
                rejected.push(RejectedLine {
                    line: i + 1,
                    text: token.to_string(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let smiles = canonicalize(&graph);
        if !seen.insert(smiles.clone()) {
            duplicates += 1;
            continue;
        }
        let properties = compute_properties(&graph);
        for f in PropertyFamily::ALL {
            if let Some(level) = f.level(&properties) {
                *index.histograms.entry(f).or_default().entry(level).or_default() += 1;
            }
        }
        molecules.push(CorpusMolecule { smiles, properties });
    }
    if molecules.len() < min_size {
        return Err(HarnessError::CorpusTooSmall {
            found: molecules.len(),
            required: min_size,
        });
    }
    Ok(Corpus {
        molecules,
        rejected,
        duplicates,
        index,
    })
}

pub fn ingest_corpus(path: &Path, min_size: usize) -> Result<Corpus, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    ingest_text(&text, min_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_and_rejections() {
        let c = ingest_text("CCO\nOCC\nC(\n\n# note\nc1ccccc1 benzene\n", 0).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.duplicates, 1);
        assert_eq!(c.rejected.len(), 1);
        assert_eq!(c.rejected[0].line, 3);
        assert!(c.rejected[0].reason.contains("syntax"), "{}", c.rejected[0].reason);
    }

    #[test]
    fn canonical_output_is_fixed_point() {
        let c = ingest_text("OCC\nC1=CC=CC=C1\nc1ccncc1C(=O)O\nNCC(C)(C)O\n", 0).unwrap();
        let again = ingest_text(&c.to_smi(), 0).unwrap();
        assert_eq!(again.to_smi(), c.to_smi());
        assert_eq!(again.index, c.index);
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            ingest_text("CCO\n", 2),
            Err(HarnessError::CorpusTooSmall { found: 1, required: 2 })
        ));
    }

    #[test]
    fn histogram_counts() {
        let c = ingest_text("CCO\nCCN\nCCC\n", 0).unwrap();
        assert_eq!(c.index.histograms[&PropertyFamily::Hbd][&1], 2);
        assert_eq!(c.index.histograms[&PropertyFamily::Hbd][&0], 1);
    }
}
