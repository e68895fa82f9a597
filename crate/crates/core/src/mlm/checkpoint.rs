//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"BMLM"
//! version  u32
//! config   6 × u32: vocab_size d_model heads layers d_ff max_len
//! vocab    u32 count, then per token: u32 byte length + UTF-8 bytes
//! tensors  u32 count, then per tensor: u64 length + f64 values
//! ```
//!
//! Tensors follow [`MlmParams::tensor_names`] order. Nothing may follow the
//! last tensor.

use std::path::Path;

use super::params::{MlmParams, ModelConfig};
use super::vocab::Vocabulary;
use super::MaskedLm;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BMLM";
pub const VERSION: u32 = 1;

pub fn encode(model: &MaskedLm) -> Vec<u8> {
    let p = &model.params;
    let cfg = p.config;
    let mut out = Vec::with_capacity(8 * p.num_parameters() + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [cfg.vocab_size, cfg.d_model, cfg.heads, cfg.layers, cfg.d_ff, cfg.max_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let tokens = model.vocab.tokens();
    out.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
    for t in tokens {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        out.extend_from_slice(t.as_bytes());
    }
    let tensors = p.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for x in t.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<MaskedLm> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.u32("model config")? as usize;
    }
    let config = ModelConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        heads: dims[2],
        layers: dims[3],
        d_ff: dims[4],
        max_len: dims[5],
    };
    config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

    let count = r.u32("vocabulary size")? as usize;
    if count != config.vocab_size {
        return Err(Error::VocabMismatch {
            expected: config.vocab_size,
            found: count,
        });
    }
    let mut tokens = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32("token length")? as usize;
        let raw = r.take(len, "token")?;
        let token = std::str::from_utf8(raw)
            .map_err(|_| Error::CorruptCheckpoint("token is not UTF-8".into()))?;
        tokens.push(token.to_string());
    }
    let vocab = Vocabulary::from_tokens(tokens)?;

    let mut params = MlmParams::zeros(config);
    let n_tensors = r.u32("tensor count")? as usize;
    let expected_tensors = params.tensors().len();
    if n_tensors != expected_tensors {
        return Err(Error::CorruptCheckpoint(format!(
            "expected {expected_tensors} tensors, found {n_tensors}"
        )));
    }
    let names = params.tensor_names();
    for (tensor, name) in params.tensors_mut().into_iter().zip(names) {
        let len = r.u64("tensor length")? as usize;
        if len != tensor.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} has {len} values, expected {}",
                tensor.len()
            )));
        }
        let raw = r.take(len * 8, &name)?;
        for (x, chunk) in tensor.iter_mut().zip(raw.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(MaskedLm { vocab, params })
}

pub fn save(model: &MaskedLm, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<MaskedLm> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
