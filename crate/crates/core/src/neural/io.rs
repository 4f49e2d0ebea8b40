//! Binary model files.
//!
//! Little-endian layout:
//!
//! ```text
//! "NEDM" u32 version
//! u32 d_emb, u32 layers, u32 head_hidden
//! u32 alphabet size, then one u32 code point per non-reserved symbol
//! u32 tensor count, then per tensor:
//!     u16 name length, name bytes, u8 rank, u32 dims, f64 values
//! f64 threshold
//! ```

use std::path::Path;

use super::params::{Layout, ModelConfig};
use super::NeuralEditModel;
use crate::error::{Error, Result};
use crate::strings::Alphabet;

pub const MAGIC: &[u8; 4] = b"NEDM";
pub const FORMAT_VERSION: u32 = 1;

impl NeuralEditModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let c = self.layout.config;
        for v in [c.d_emb, c.layers, c.head_hidden] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let chars = self.alphabet.chars();
        out.extend_from_slice(&(chars.len() as u32).to_le_bytes());
        for &ch in chars {
            out.extend_from_slice(&(ch as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.layout.tensors.len() as u32).to_le_bytes());
        for t in &self.layout.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &self.params[t.range()] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.threshold.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::ModelFormat("missing NEDM magic".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelVersion(format!(
                "file has version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let config = ModelConfig {
            d_emb: r.u32("config")? as usize,
            layers: r.u32("config")? as usize,
            head_hidden: r.u32("config")? as usize,
        };
        config
            .validate()
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        let count = r.u32("alphabet")? as usize;
        let mut chars = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let code = r.u32("alphabet")?;
            let ch = char::from_u32(code)
                .ok_or_else(|| Error::AlphabetMismatch(format!("invalid code point {code:#x}")))?;
            chars.push(ch);
        }
        let alphabet = Alphabet::from_listing(chars).map_err(|e| Error::AlphabetMismatch(e.to_string()))?;
        let layout = Layout::new(config, alphabet.len());
        let mut params = vec![0.0; layout.total];
        let n_tensors = r.u32("tensor count")? as usize;
        if n_tensors != layout.tensors.len() {
            return Err(Error::ModelFormat(format!(
                "expected {} tensors, found {n_tensors}",
                layout.tensors.len()
            )));
        }
        for expected in &layout.tensors {
            let len = r.u16("tensor name")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| Error::ModelFormat("tensor name is not UTF-8".into()))?;
            if name != expected.name {
                return Err(Error::ModelFormat(format!(
                    "expected tensor {}, found {name}",
                    expected.name
                )));
            }
            let rank = r.take(1, "tensor rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor shape")? as usize);
            }
            if shape != expected.shape {
                let msg = format!("tensor {name} has shape {shape:?}, expected {:?}", expected.shape);
                return Err(if name == "encoder.embedding" {
                    Error::AlphabetMismatch(msg)
                } else {
                    Error::ModelFormat(msg)
                });
            }
            for v in &mut params[expected.range()] {
                *v = r.f64("tensor values")?;
            }
        }
        let threshold = r.f64("threshold")?;
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::ModelFormat(format!("threshold {threshold} outside [0, 1]")));
        }
        Ok(NeuralEditModel::from_parts(alphabet, layout, params, threshold))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::ModelTruncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strings::Token;

    fn model() -> NeuralEditModel {
        let mut m = NeuralEditModel::new(Alphabet::from_chars("abc'é".chars()), ModelConfig::new(4, 1), 11).unwrap();
        m.set_threshold(0.375).unwrap();
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = NeuralEditModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let a = Token::new("abé").unwrap();
        let b = Token::new("ca").unwrap();
        assert_eq!(back.pair_score(&a, &b).unwrap(), m.pair_score(&a, &b).unwrap());
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = model().to_bytes();
        bytes[4] = 9;
        assert!(matches!(NeuralEditModel::from_bytes(&bytes), Err(Error::ModelVersion(_))));
    }

    #[test]
    fn truncation_detected_everywhere() {
        let bytes = model().to_bytes();
        for cut in [0, 3, 6, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = NeuralEditModel::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::ModelTruncated(_) | Error::ModelFormat(_)),
                "cut at {cut}: {err}"
            );
        }
        assert!(matches!(
            NeuralEditModel::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::ModelTruncated(_))
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = model().to_bytes();
        bytes.push(0);
        assert!(matches!(NeuralEditModel::from_bytes(&bytes), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn unsorted_alphabet_rejected() {
        let mut bytes = model().to_bytes();
        // alphabet entries begin after magic, version, 3 config words, count
        let first = 4 + 4 + 12 + 4;
        bytes[first..first + 4].copy_from_slice(&('z' as u32).to_le_bytes());
        assert!(matches!(NeuralEditModel::from_bytes(&bytes), Err(Error::AlphabetMismatch(_))));
    }
}
