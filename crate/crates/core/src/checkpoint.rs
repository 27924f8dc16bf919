//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "LCRCKPT\0"
//! major      u16
//! minor      u16
//! header     u32 length + UTF-8 JSON (model config and training metadata)
//! vocab      u32 count, then per token: u32 length + UTF-8 bytes
//! charges    u32 count, then per charge: u32 length + UTF-8 bytes
//! tensors    u32 count, then per tensor:
//!              u32 name length + UTF-8 name
//!              u32 ndim, ndim × u32 dims
//!              product(dims) × f64
//! ```
//!
//! Readers accept any minor version of their major version; unknown header
//! fields are ignored.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, OpinionModel};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::tokenizer::Vocab;

pub const MAGIC: &[u8; 8] = b"LCRCKPT\0";
pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub use_chains: bool,
    #[serde(default)]
    pub epoch: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: OpinionModel,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_MAJOR.to_le_bytes());
        out.extend_from_slice(&FORMAT_MINOR.to_le_bytes());
        put_str(&mut out, &serde_json::to_string(&self.header)?)?;
        let tokens = self.model.vocab.tokens();
        put_len(&mut out, tokens.len())?;
        for t in tokens {
            put_str(&mut out, t)?;
        }
        let charges = self.model.charges();
        put_len(&mut out, charges.len())?;
        for c in &charges {
            put_str(&mut out, c)?;
        }
        put_len(&mut out, self.model.params.len())?;
        for (name, t) in self.model.params.iter() {
            put_str(&mut out, name)?;
            put_len(&mut out, t.shape().len())?;
            for &d in t.shape() {
                put_len(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let major = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        let _minor = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if major != FORMAT_MAJOR {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {major} (this build reads {FORMAT_MAJOR})"
            )));
        }
        let header: CheckpointHeader = serde_json::from_str(&r.string()?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        header.model.check()?;
        let n = r.u32()? as usize;
        let tokens = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let vocab = Vocab::from_tokens(tokens).map_err(|e| Error::Checkpoint(format!("bad vocabulary: {e}")))?;
        let n = r.u32()? as usize;
        let charges = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if params.contains(&name) {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
            params.insert(&name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = OpinionModel {
            config: header.model.clone(),
            vocab,
            params,
        };
        if model.charges() != charges {
            return Err(Error::Checkpoint("charge registry does not match the stored charge maps".into()));
        }
        check_shapes(&model)?;
        Ok(Checkpoint { header, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn check_shapes(m: &OpinionModel) -> Result<()> {
    let emb = m.params.get(crate::encoder::EMBED)?;
    if emb.shape() != [m.vocab.len(), m.config.d] {
        return Err(Error::Checkpoint(format!(
            "embedding shape {:?} does not match vocabulary {} × d {}",
            emb.shape(),
            m.vocab.len(),
            m.config.d
        )));
    }
    let out = m.params.get("decoder.out.w")?;
    if out.shape() != [m.config.d, m.vocab.len()] {
        return Err(Error::Checkpoint(format!("output projection shape {:?}", out.shape())));
    }
    Ok(())
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_len(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}
