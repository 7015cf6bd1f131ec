use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::smiles::PropertyVector;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
/// Molecule separator, rendered as a newline.
pub const SEP: TokenId = 3;
/// Marks the "generate a diverse set" prompt variant.
pub const DIVERSE: TokenId = 4;

const SPECIAL: [&str; 5] = ["<PAD>", "<BOS>", "<EOS>", "\n", "<DIVERSE>"];

const SMILES_TOKENS: [&str; 35] = [
    "B", "C", "N", "O", "P", "S", "F", "I", "Cl", "Br", "b", "c", "n", "o", "p", "s", "H", "[",
    "]", "(", ")", "=", "#", "-", "+", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
];

/// Property families that can appear as discrete prompt tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyFamily {
    Hbd,
    Hba,
    Rings,
    Heavy,
}

impl PropertyFamily {
    pub const ALL: [PropertyFamily; 4] = [
        PropertyFamily::Hbd,
        PropertyFamily::Hba,
        PropertyFamily::Rings,
        PropertyFamily::Heavy,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            PropertyFamily::Hbd => "HBD",
            PropertyFamily::Hba => "HBA",
            PropertyFamily::Rings => "RINGS",
            PropertyFamily::Heavy => "HEAVY",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        PropertyFamily::ALL
            .into_iter()
            .find(|f| f.tag().eq_ignore_ascii_case(tag))
    }

    /// Largest representable level.
    pub fn max_level(self) -> u32 {
        match self {
            PropertyFamily::Hbd => 6,
            PropertyFamily::Hba => 8,
            PropertyFamily::Rings => 5,
            PropertyFamily::Heavy => HEAVY_BUCKETS.len() as u32 - 1,
        }
    }

    /// Discrete level of a molecule in this family, `None` when out of range.
    pub fn level(self, props: &PropertyVector) -> Option<u32> {
        let raw = match self {
            PropertyFamily::Hbd => props.hb_donors,
            PropertyFamily::Hba => props.hb_acceptors,
            PropertyFamily::Rings => props.ring_count,
            PropertyFamily::Heavy => return Some(heavy_bucket(props.heavy_atom_count)),
        };
        (raw <= self.max_level()).then_some(raw)
    }
}

/// Inclusive heavy-atom ranges; the last bucket is open-ended.
pub const HEAVY_BUCKETS: [(u32, u32); 6] =
    [(0, 5), (6, 8), (9, 11), (12, 14), (15, 17), (18, u32::MAX)];

pub fn heavy_bucket(heavy_atoms: u32) -> u32 {
    HEAVY_BUCKETS
        .iter()
        .position(|&(lo, hi)| heavy_atoms >= lo && heavy_atoms <= hi)
        .unwrap_or(HEAVY_BUCKETS.len() - 1) as u32
}

pub fn prompt_token_text(family: PropertyFamily, level: u32) -> String {
    format!("<{}={}>", family.tag(), level)
}

/// Requires a molecule's level in `family` to equal `level`. For the heavy
/// atom family the level is a bucket, so the constraint is an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PropertyConstraint {
    pub family: PropertyFamily,
    pub level: u32,
}

impl PropertyConstraint {
    pub fn new(family: PropertyFamily, level: u32) -> Self {
        PropertyConstraint { family, level }
    }

    pub fn is_satisfied(&self, props: &PropertyVector) -> bool {
        self.family.level(props) == Some(self.level)
    }
}

impl fmt::Display for PropertyConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.family.tag(), self.level)
    }
}

/// Dense token table shared by every checkpoint.
#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    max_len: usize,
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary")
            .field("len", &self.tokens.len())
            .field("hash", &format_args!("{:016x}", self.fingerprint()))
            .finish()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

impl Vocabulary {
    /// Specials, prompt tokens for every family level, then SMILES units.
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = SPECIAL.iter().map(|s| s.to_string()).collect();
        for family in PropertyFamily::ALL {
            for level in 0..=family.max_level() {
                tokens.push(prompt_token_text(family, level));
            }
        }
        tokens.extend(SMILES_TOKENS.iter().map(|s| s.to_string()));
        tokens.extend((10..100).map(|d| format!("%{d}")));
        Self::from_tokens(tokens).expect("standard vocabulary is well formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, PolicyError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || index.insert(t.clone(), i as TokenId).is_some() {
                return Err(PolicyError::Format(format!("bad or duplicate token {t:?}")));
            }
        }
        if tokens.len() <= DIVERSE as usize || tokens[SEP as usize] != "\n" {
            return Err(PolicyError::Format("special tokens missing".into()));
        }
        let max_len = tokens.iter().map(|t| t.len()).max().unwrap_or(1);
        Ok(Vocabulary {
            tokens,
            index,
            max_len,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn text(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn prompt_token(&self, family: PropertyFamily, level: u32) -> Option<TokenId> {
        self.id(&prompt_token_text(family, level))
    }

    /// Tokens that may appear inside a molecule string.
    pub fn is_molecule_token(&self, id: TokenId) -> bool {
        let t = self.text(id);
        !(t.starts_with('<') || id == SEP)
    }

    /// Stable FNV-1a hash of the token list, stored in checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(0u8)) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Greedy longest-match tokenization.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, PolicyError> {
        let mut out = Vec::with_capacity(text.len());
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let longest = (1..=self.max_len.min(rest.len()))
                .rev()
                .filter(|&l| rest.is_char_boundary(l))
                .find_map(|l| self.index.get(&rest[..l]).map(|&id| (id, l)));
            match longest {
                Some((id, l)) => {
                    out.push(id);
                    pos += l;
                }
                None => return Err(PolicyError::UnknownToken { position: pos }),
            }
        }
        Ok(out)
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&id| self.text(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longest_match() {
        let v = Vocabulary::standard();
        assert_eq!(v.tokenize("Cl").unwrap(), vec![v.id("Cl").unwrap()]);
        assert_eq!(v.tokenize("CCl").unwrap().len(), 2);
        assert_eq!(v.tokenize("C%12CC%12").unwrap().len(), 5);
        let ids = v.tokenize("CCO\nCCN").unwrap();
        assert_eq!(ids.iter().filter(|&&t| t == SEP).count(), 1);
        assert_eq!(ids.len(), 7);
    }

    #[test]
    fn unknown_token_reports_position() {
        let v = Vocabulary::standard();
        assert!(matches!(
            v.tokenize("CC*"),
            Err(PolicyError::UnknownToken { position: 2 })
        ));
    }

    #[test]
    fn round_trip() {
        let v = Vocabulary::standard();
        for s in [
            "c1ccccc1[N+](=O)[O-]",
            "BrCCBr\nClC(Cl)Cl",
            "C%10CC%10",
            "[nH]",
        ] {
            assert_eq!(v.detokenize(&v.tokenize(s).unwrap()), s);
        }
    }

    #[test]
    fn dense_and_distinct() {
        let v = Vocabulary::standard();
        let specials = [PAD, BOS, EOS, SEP, DIVERSE];
        for (i, &s) in specials.iter().enumerate() {
            assert_eq!(s as usize, i);
        }
        assert!(v.prompt_token(PropertyFamily::Hbd, 6).is_some());
        assert!(v.prompt_token(PropertyFamily::Hbd, 7).is_none());
        assert_eq!(heavy_bucket(3), 0);
        assert_eq!(heavy_bucket(9), 2);
        assert_eq!(heavy_bucket(40), 5);
    }
}
