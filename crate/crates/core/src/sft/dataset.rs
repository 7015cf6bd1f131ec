use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::filter::{filter, FilterMode, FilteredMolecule};
use super::{PromptSpec, SftError};
use crate::fingerprints::{default_fingerprint, tanimoto};
use crate::policy::{SequenceExample, TokenId, Vocabulary, EOS, SEP};
use crate::smiles::{canonical_smiles, compute_properties, parse_smiles};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub collect_width: usize,
    pub filter: FilterMode,
    pub max_k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: PromptSpec,
    pub molecules: Vec<FilteredMolecule>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SftDataset {
    pub records: Vec<SftRecord>,
}

impl SftDataset {
    /// Filters each collected set. Prompts left empty are skipped and
    /// returned by id.
    pub fn from_collections(
        collections: &[(PromptSpec, Vec<String>)],
        provenance: &Provenance,
    ) -> (SftDataset, Vec<String>) {
        let mut records = Vec::new();
        let mut excluded = Vec::new();
        for (prompt, raws) in collections {
            match filter(raws, prompt, provenance.filter, provenance.max_k) {
                Ok(molecules) => records.push(SftRecord {
                    prompt: prompt.clone(),
                    molecules,
                    provenance: provenance.clone(),
                }),
                Err(_) => {
                    log::info!("prompt {} has no molecules after filtering", prompt.id());
                    excluded.push(prompt.id());
                }
            }
        }
        (SftDataset { records }, excluded)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line, in record order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SftError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(line)
                .map_err(|e| SftError::Dataset(format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(SftDataset { records })
    }

    /// Re-derives every dataset invariant from the raw strings.
    pub fn validate(&self) -> Result<(), SftError> {
        for r in &self.records {
            let bad = |m: &str| Err(SftError::Dataset(format!("prompt {}: {m}", r.prompt.id())));
            if r.molecules.is_empty() {
                return bad("empty molecule list");
            }
            let mut seen = HashSet::new();
            let mut fps = Vec::new();
            for m in &r.molecules {
                let Ok(graph) = parse_smiles(&m.raw) else {
                    return bad(&format!("{:?} does not parse", m.raw));
                };
                if canonical_smiles(&m.raw).ok().as_ref() != Some(&m.canonical) {
                    return bad(&format!("{:?} has a stale canonical form", m.raw));
                }
                if !seen.insert(m.canonical.clone()) {
                    return bad(&format!("{} appears twice", m.canonical));
                }
                if !r.prompt.is_satisfied(&compute_properties(&graph)) {
                    return bad(&format!("{} does not satisfy the prompt", m.canonical));
                }
                fps.push(default_fingerprint(&graph));
            }
            if let FilterMode::Hard { threshold } = r.provenance.filter {
                for i in 0..fps.len() {
                    for j in i + 1..fps.len() {
                        if tanimoto(&fps[i], &fps[j])? >= threshold {
                            return bad("pair above the hard-filter threshold");
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// `BOS ‖ prompt ‖ DIVERSE ‖ m_1 ‖ SEP ‖ … ‖ m_K ‖ EOS`, weighted so only the
/// molecule, separator and end tokens are predicted.
pub fn training_sequence<S: AsRef<str>>(
    vocab: &Vocabulary,
    prompt: &PromptSpec,
    molecules: &[S],
) -> Result<SequenceExample, SftError> {
    let mut tokens: Vec<TokenId> = prompt.desc_div_tokens(vocab);
    let prompt_len = tokens.len();
    for (i, m) in molecules.iter().enumerate() {
        tokens.extend(vocab.tokenize(m.as_ref())?);
        tokens.push(if i + 1 == molecules.len() { EOS } else { SEP });
    }
    let weights = (0..tokens.len() - 1)
        .map(|t| if t + 1 >= prompt_len { 1.0 } else { 0.0 })
        .collect();
    Ok(SequenceExample::new(tokens, weights))
}
