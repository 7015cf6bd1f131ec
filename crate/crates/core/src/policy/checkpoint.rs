//! Binary checkpoint format (little-endian):
//!
//! ```text
//! magic "DIVMOLCK" | version u32 | vocab hash u64
//! token count u32 | per token: byte length u16, UTF-8 bytes
//! vocab u32 | d_emb u32 | d_h u32 | parameter count u64 | f64 * count
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::{ModelDims, PolicyParameters};
use super::vocab::Vocabulary;
use super::PolicyError;

const MAGIC: &[u8; 8] = b"DIVMOLCK";
const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &PolicyParameters, vocab: &Vocabulary) -> Vec<u8> {
    let d = params.dims();
    let mut out = Vec::with_capacity(64 + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&vocab.fingerprint().to_le_bytes());
    out.extend_from_slice(&(vocab.len() as u32).to_le_bytes());
    for t in vocab.tokens() {
        out.extend_from_slice(&(t.len() as u16).to_le_bytes());
        out.extend_from_slice(t.as_bytes());
    }
    for x in [d.vocab, d.d_emb, d.d_h] {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for x in params.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PolicyError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                PolicyError::Format(format!("truncated checkpoint at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, PolicyError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, PolicyError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Decodes a checkpoint and checks it against the expected vocabulary.
pub fn decode_checkpoint(
    bytes: &[u8],
    expected: &Vocabulary,
) -> Result<PolicyParameters, PolicyError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(PolicyError::Format("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(PolicyError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let hash = r.u64()?;
    let n_tokens = r.u32()? as usize;
    let mut tokens = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        let len = r.u16()? as usize;
        let s = std::str::from_utf8(r.take(len)?)
            .map_err(|e| PolicyError::Format(format!("token not UTF-8: {e}")))?;
        tokens.push(s.to_string());
    }
    let stored = Vocabulary::from_tokens(tokens)?;
    if stored.fingerprint() != hash {
        return Err(PolicyError::Format(
            "vocabulary hash does not match stored tokens".into(),
        ));
    }
    if hash != expected.fingerprint() {
        return Err(PolicyError::VocabularyMismatch {
            expected: expected.fingerprint(),
            found: hash,
        });
    }
    let dims = ModelDims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if dims.vocab != expected.len() {
        return Err(PolicyError::Format(
            "vocabulary size disagrees with shape header".into(),
        ));
    }
    let count = r.u64()? as usize;
    let mut params = PolicyParameters::zeros(dims);
    if count != params.len() {
        return Err(PolicyError::Format(format!(
            "parameter count {count} does not match shapes ({})",
            params.len()
        )));
    }
    let raw = r.take(count * 8)?;
    for (dst, chunk) in params.as_mut_slice().iter_mut().zip(raw.chunks_exact(8)) {
        *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
    }
    if r.pos != bytes.len() {
        return Err(PolicyError::Format(
            "trailing bytes after parameters".into(),
        ));
    }
    Ok(params)
}

/// Writes atomically (temp file + rename).
pub fn save_checkpoint(
    params: &PolicyParameters,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<(), PolicyError> {
    let bytes = encode_checkpoint(params, vocab);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<PolicyParameters, PolicyError> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(vocab: &Vocabulary) -> PolicyParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        PolicyParameters::init(ModelDims::new(vocab.len(), 4, 5), &mut rng)
    }

    #[test]
    fn bit_exact_round_trip() {
        let v = Vocabulary::standard();
        let p = params(&v);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&p, &v, &path).unwrap();
        let q = load_checkpoint(&path, &v).unwrap();
        assert!(p
            .as_slice()
            .iter()
            .zip(q.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_file_is_format_error() {
        let v = Vocabulary::standard();
        let bytes = encode_checkpoint(&params(&v), &v);
        for cut in [0, 5, 20, bytes.len() - 1] {
            assert!(matches!(
                decode_checkpoint(&bytes[..cut], &v),
                Err(PolicyError::Format(_))
            ));
        }
    }

    #[test]
    fn other_vocabulary_is_rejected() {
        let v = Vocabulary::standard();
        let mut tokens = v.tokens().to_vec();
        tokens.push("X".into());
        let other = Vocabulary::from_tokens(tokens).unwrap();
        let bytes = encode_checkpoint(&params(&other), &other);
        assert!(matches!(
            decode_checkpoint(&bytes, &v),
            Err(PolicyError::VocabularyMismatch { .. })
        ));
    }
}
