use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bleu::bleu;
use super::diversity::{cmp_f64_desc, intdiv, ncircles_greedy};
use super::MetricsError;
use crate::fingerprints::{default_fingerprint, Fingerprint};
use crate::policy::{PropertyConstraint, Vocabulary};
use crate::smiles::{canonical_smiles, compute_properties, parse_smiles, CanonicalSmiles};

/// Reference-mode acceptance requires BLEU strictly above this.
pub const BLEU_ACCEPT_THRESHOLD: f64 = 0.7;
/// Number of best-scoring unique molecules averaged by `top10`.
pub const TOP_N: usize = 10;
/// NCircles thresholds reported by default.
pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.75, 0.65];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AcceptanceSpec {
    Reference {
        reference: CanonicalSmiles,
    },
    Predicate {
        constraints: Vec<PropertyConstraint>,
    },
}

impl AcceptanceSpec {
    /// Whether the molecule is accepted, and its packing score: BLEU against
    /// the reference, or 1.0 for every predicate match.
    pub fn judge(
        &self,
        vocab: &Vocabulary,
        molecule: &CanonicalSmiles,
    ) -> Result<(bool, f64), MetricsError> {
        match self {
            AcceptanceSpec::Reference { reference } => {
                let s = smiles_bleu(vocab, molecule, reference)?;
                Ok((s > BLEU_ACCEPT_THRESHOLD, s))
            }
            AcceptanceSpec::Predicate { constraints } => {
                let props = compute_properties(&parse_smiles(molecule.as_str())?);
                let ok = constraints.iter().all(|c| c.is_satisfied(&props));
                Ok((ok, if ok { 1.0 } else { 0.0 }))
            }
        }
    }
}

/// A deduplicated accepted molecule with its fingerprint and packing score.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedMolecule {
    pub canonical: CanonicalSmiles,
    pub fingerprint: Fingerprint,
    pub score: f64,
}

pub fn smiles_bleu(
    vocab: &Vocabulary,
    candidate: &CanonicalSmiles,
    reference: &CanonicalSmiles,
) -> Result<f64, MetricsError> {
    bleu(
        &vocab.tokenize(candidate.as_str())?,
        &vocab.tokenize(reference.as_str())?,
    )
}

/// Distinct accepted molecules, in first-occurrence order.
pub fn accepted_unique(
    vocab: &Vocabulary,
    molecules: &[CanonicalSmiles],
    acceptor: &AcceptanceSpec,
) -> Result<(usize, Vec<AcceptedMolecule>), MetricsError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for m in molecules {
        if !seen.insert(m) {
            continue;
        }
        let (ok, score) = acceptor.judge(vocab, m)?;
        if ok {
            out.push(AcceptedMolecule {
                canonical: m.clone(),
                fingerprint: default_fingerprint(&parse_smiles(m.as_str())?),
                score,
            });
        }
    }
    Ok((out.len(), out))
}

/// Mean BLEU of the best `TOP_N` unique molecules (all of them when fewer).
pub fn top10(
    vocab: &Vocabulary,
    molecules: &[CanonicalSmiles],
    reference: &CanonicalSmiles,
) -> Result<f64, MetricsError> {
    let unique: HashSet<&CanonicalSmiles> = molecules.iter().collect();
    if unique.is_empty() {
        return Ok(0.0);
    }
    let mut scores = unique
        .into_iter()
        .map(|m| smiles_bleu(vocab, m, reference))
        .collect::<Result<Vec<_>, _>>()?;
    scores.sort_by(|a, b| cmp_f64_desc(*a, *b));
    let top = &scores[..scores.len().min(TOP_N)];
    Ok(top.iter().sum::<f64>() / top.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeRecord {
    pub raw: String,
    pub canonical: Option<CanonicalSmiles>,
    /// An earlier segment has the same canonical form.
    pub duplicate: bool,
    pub accepted: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub prompt: String,
    pub generated: usize,
    pub valid: usize,
    pub distinct_raw: usize,
    pub distinct_canonical: usize,
    pub accepted_unique: usize,
    /// Keyed by the threshold's decimal text, e.g. "0.65".
    pub ncircles: BTreeMap<String, usize>,
    pub intdiv: f64,
    pub top10: f64,
    pub molecules: Vec<MoleculeRecord>,
}

pub fn threshold_key(h: f64) -> String {
    format!("{h}")
}

impl EvaluationReport {
    pub fn ncircles_at(&self, h: f64) -> Option<usize> {
        self.ncircles.get(&threshold_key(h)).copied()
    }

    pub fn validity(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.valid as f64 / self.generated as f64
        }
    }

    /// Thresholds present in the report, largest first.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut hs: Vec<f64> = self
            .ncircles
            .keys()
            .filter_map(|k| k.parse().ok())
            .collect();
        hs.sort_by(|a, b| cmp_f64_desc(*a, *b));
        hs
    }
}

/// Scores a list of raw generated strings for one prompt. Unparseable
/// strings count as generated but never as valid.
pub fn evaluate(
    vocab: &Vocabulary,
    prompt: &str,
    raws: &[String],
    acceptor: &AcceptanceSpec,
    reference: Option<&CanonicalSmiles>,
    thresholds: &[f64],
) -> Result<EvaluationReport, MetricsError> {
    let mut records = Vec::with_capacity(raws.len());
    let mut valid = Vec::new();
    let mut seen = HashSet::new();
    for raw in raws {
        let canonical = canonical_smiles(raw).ok();
        let (mut duplicate, mut accepted, mut score) = (false, false, 0.0);
        if let Some(c) = &canonical {
            valid.push(c.clone());
            duplicate = !seen.insert(c.clone());
            (accepted, score) = acceptor.judge(vocab, c)?;
        }
        records.push(MoleculeRecord {
            raw: raw.clone(),
            canonical,
            duplicate,
            accepted,
            score,
        });
    }
    let (count, accepted) = accepted_unique(vocab, &valid, acceptor)?;
    let fps: Vec<Fingerprint> = accepted.iter().map(|a| a.fingerprint.clone()).collect();
    let mut ncircles = BTreeMap::new();
    for &h in thresholds {
        ncircles.insert(threshold_key(h), ncircles_greedy(&accepted, h)?);
    }
    let reference = reference.or(match acceptor {
        AcceptanceSpec::Reference { reference } => Some(reference),
        AcceptanceSpec::Predicate { .. } => None,
    });
    let top10 = match reference {
        Some(r) => top10(vocab, &valid, r)?,
        None => 0.0,
    };
    Ok(EvaluationReport {
        prompt: prompt.to_string(),
        generated: raws.len(),
        valid: valid.len(),
        distinct_raw: raws.iter().collect::<HashSet<_>>().len(),
        distinct_canonical: seen.len(),
        accepted_unique: count,
        ncircles,
        intdiv: intdiv(&fps)?,
        top10,
        molecules: records,
    })
}

/// One row per report. Floats use fixed six-decimal formatting so equal
/// runs produce equal bytes.
pub fn write_reports_csv<W: Write>(
    out: &mut W,
    reports: &[EvaluationReport],
) -> std::io::Result<()> {
    let thresholds = reports.first().map(|r| r.thresholds()).unwrap_or_default();
    write!(
        out,
        "prompt,generated,valid,distinct_raw,distinct_canonical,accepted_unique"
    )?;
    for h in &thresholds {
        write!(out, ",ncircles_{}", threshold_key(*h))?;
    }
    writeln!(out, ",intdiv,top10")?;
    for r in reports {
        write!(
            out,
            "{},{},{},{},{},{}",
            r.prompt, r.generated, r.valid, r.distinct_raw, r.distinct_canonical, r.accepted_unique
        )?;
        for h in &thresholds {
            write!(out, ",{}", r.ncircles_at(*h).unwrap_or(0))?;
        }
        writeln!(out, ",{:.6},{:.6}", r.intdiv, r.top10)?;
    }
    Ok(())
}

pub fn reports_to_json(reports: &[EvaluationReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}
