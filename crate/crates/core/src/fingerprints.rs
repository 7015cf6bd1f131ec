//! Circular (Morgan-style) fingerprints and Tanimoto similarity.
//!
//! Atom identifiers are FNV-1a 64-bit hashes over a fixed little-endian byte
//! encoding, so bit positions are stable across platforms and builds. Every
//! identifier produced at every radius sets bit `id mod n_bits`; identical
//! environments on different atoms are not pruned. Atoms without neighbors
//! are not rehashed past radius 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::MolecularGraph;

pub const DEFAULT_RADIUS: u32 = 2;
pub const DEFAULT_BITS: usize = 2048;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
/// Written after every encoded field.
pub const FIELD_SEPARATOR: u8 = 0x1f;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint parameters differ: {0} bits/radius {1} vs {2} bits/radius {3}")]
    ParameterMismatch(usize, u32, usize, u32),
    #[error("n_bits must be a power of two >= 64, got {0}")]
    InvalidWidth(usize),
    #[error("malformed hex fingerprint: {0}")]
    Hex(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    words: Vec<u64>,
    n_bits: usize,
    radius: u32,
}

impl Fingerprint {
    pub fn empty(n_bits: usize, radius: u32) -> Result<Self, FingerprintError> {
        if n_bits < 64 || !n_bits.is_power_of_two() {
            return Err(FingerprintError::InvalidWidth(n_bits));
        }
        Ok(Fingerprint {
            words: vec![0; n_bits / 64],
            n_bits,
            radius,
        })
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn popcount(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn to_hex(&self) -> String {
        self.words.iter().map(|w| format!("{w:016x}")).collect()
    }

    pub fn from_hex(hex: &str, radius: u32) -> Result<Self, FingerprintError> {
        if hex.len() % 16 != 0 {
            return Err(FingerprintError::Hex("length not a multiple of 16".into()));
        }
        let words = hex
            .as_bytes()
            .chunks(16)
            .map(|chunk| {
                let s =
                    std::str::from_utf8(chunk).map_err(|e| FingerprintError::Hex(e.to_string()))?;
                u64::from_str_radix(s, 16).map_err(|e| FingerprintError::Hex(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut fp = Fingerprint::empty(words.len() * 64, radius)?;
        fp.words = words;
        Ok(fp)
    }
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(FNV_OFFSET)
    }

    fn bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    fn field(&mut self, value: i64) {
        self.bytes(&value.to_le_bytes());
        self.bytes(&[FIELD_SEPARATOR]);
    }
}

/// Radius-0 identifier of every atom.
pub fn initial_identifiers(graph: &MolecularGraph) -> Vec<u64> {
    (0..graph.atom_count())
        .map(|i| {
            let atom = graph.atoms()[i];
            let mut h = Fnv1a::new();
            h.field(atom.element.atomic_number() as i64);
            h.field(graph.degree(i) as i64);
            h.field(atom.hydrogens as i64);
            h.field(atom.charge as i64);
            h.field(graph.is_atom_in_ring(i) as i64);
            h.field(atom.aromatic as i64);
            h.0
        })
        .collect()
}

pub fn morgan_fingerprint(
    graph: &MolecularGraph,
    radius: u32,
    n_bits: usize,
) -> Result<Fingerprint, FingerprintError> {
    let mut fp = Fingerprint::empty(n_bits, radius)?;
    let mut ids = initial_identifiers(graph);
    for &id in &ids {
        fp.set((id % n_bits as u64) as usize);
    }
    for r in 1..=radius {
        let next: Vec<u64> = (0..graph.atom_count())
            .map(|i| {
                // An isolated atom has nothing to expand; it keeps its identifier.
                if graph.degree(i) == 0 {
                    return ids[i];
                }
                let mut env: Vec<(u8, u64)> = graph
                    .neighbors(i)
                    .iter()
                    .map(|&(nb, b)| (graph.bonds()[b].order.code(), ids[nb]))
                    .collect();
                env.sort_unstable();
                let mut h = Fnv1a::new();
                h.field(r as i64);
                h.field(ids[i] as i64);
                for (code, id) in env {
                    h.field(code as i64);
                    h.field(id as i64);
                }
                h.0
            })
            .collect();
        ids = next;
        for &id in &ids {
            fp.set((id % n_bits as u64) as usize);
        }
    }
    Ok(fp)
}

/// Fingerprint with the default radius and width.
pub fn default_fingerprint(graph: &MolecularGraph) -> Fingerprint {
    morgan_fingerprint(graph, DEFAULT_RADIUS, DEFAULT_BITS).expect("default width is valid")
}

pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.n_bits != b.n_bits || a.radius != b.radius {
        return Err(FingerprintError::ParameterMismatch(
            a.n_bits, a.radius, b.n_bits, b.radius,
        ));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    fn fp(s: &str) -> Fingerprint {
        default_fingerprint(&parse_smiles(s).unwrap())
    }

    fn bits(n: usize, on: &[usize]) -> Fingerprint {
        let mut f = Fingerprint::empty(n, 2).unwrap();
        for &b in on {
            f.set(b);
        }
        f
    }

    #[test]
    fn methane_has_one_identifier() {
        assert_eq!(fp("C").popcount(), 1);
    }

    // Bit positions traced independently by scripts/fp_oracle.py.
    #[test]
    fn ethanol_regression_bits() {
        let f = fp("CCO");
        let on: Vec<usize> = (0..2048).filter(|&b| f.get(b)).collect();
        assert_eq!(on, vec![87, 137, 213, 364, 1013, 1092, 1390, 1765, 2021]);
        assert_eq!(f.popcount(), 9);
    }

    #[test]
    fn tanimoto_arithmetic() {
        let f = fp("CCO");
        assert_eq!(tanimoto(&f, &f).unwrap(), 1.0);
        assert_eq!(tanimoto(&bits(64, &[1, 2]), &bits(64, &[3])).unwrap(), 0.0);
        assert_eq!(
            tanimoto(&bits(64, &[1, 2, 3]), &bits(64, &[2, 3, 4])).unwrap(),
            0.5
        );
        assert_eq!(tanimoto(&bits(64, &[]), &bits(64, &[])).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_parameters() {
        let a = Fingerprint::empty(64, 2).unwrap();
        let b = Fingerprint::empty(128, 2).unwrap();
        let c = Fingerprint::empty(64, 1).unwrap();
        assert!(matches!(
            tanimoto(&a, &b),
            Err(FingerprintError::ParameterMismatch(..))
        ));
        assert!(matches!(
            tanimoto(&a, &c),
            Err(FingerprintError::ParameterMismatch(..))
        ));
        assert!(Fingerprint::empty(100, 2).is_err());
        assert!(Fingerprint::empty(32, 2).is_err());
    }

    #[test]
    fn atom_order_does_not_matter() {
        assert_eq!(fp("OCC"), fp("CCO"));
        assert_eq!(fp("c1ccccc1CN"), fp("NCc1ccccc1"));
    }

    #[test]
    fn hex_round_trip() {
        let f = fp("CC(=O)Nc1ccc(O)cc1");
        let back = Fingerprint::from_hex(&f.to_hex(), f.radius()).unwrap();
        assert_eq!(back, f);
        assert!(Fingerprint::from_hex("abc", 2).is_err());
    }

    #[test]
    fn similar_molecules_score_higher() {
        let base = fp("CCCCCCO");
        let near = fp("CCCCCCN");
        let far = fp("c1ccccc1Cl");
        assert!(tanimoto(&base, &near).unwrap() > tanimoto(&base, &far).unwrap());
    }
}
