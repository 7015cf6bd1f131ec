//! Set-level evaluation: BLEU, accepted-and-unique counts, NCircles,
//! internal diversity and Top-10.

mod bleu;
mod diversity;
mod report;

pub use bleu::{bleu, BLEU_EPSILON, BLEU_MAX_ORDER};
pub use diversity::{
    greedy_centers, intdiv, ncircles_exact, ncircles_greedy, packing_order, EXACT_LIMIT,
};
pub use report::{
    accepted_unique, evaluate, reports_to_json, smiles_bleu, threshold_key, top10,
    write_reports_csv, AcceptanceSpec, AcceptedMolecule, EvaluationReport, MoleculeRecord,
    BLEU_ACCEPT_THRESHOLD, DEFAULT_THRESHOLDS, TOP_N,
};

use thiserror::Error;

use crate::fingerprints::FingerprintError;
use crate::policy::PolicyError;
use crate::smiles::SmilesError;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty token sequence")]
    EmptyInput,
    #[error("{0} molecules exceed the exact solver limit")]
    TooLarge(usize),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error(transparent)]
    Tokenize(#[from] PolicyError),
}
