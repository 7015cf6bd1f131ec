//! Shared inputs for the benchmarks.

use std::path::Path;

/// The first `n` SMILES lines of the bundled corpus.
pub fn corpus_smiles(n: usize) -> Vec<String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus.smi");
    let text = std::fs::read_to_string(path).expect("bundled corpus");
    text.lines()
        .filter_map(|l| l.split_whitespace().next())
        .take(n)
        .map(str::to_string)
        .collect()
}
