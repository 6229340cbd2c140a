//! Binary checkpoints.
//!
//! All integers are little-endian `u32`, all values little-endian `f64`:
//!
//! ```text
//! "FEDS" version alphabet_size length embedding_dim tensor_count
//! repeated tensor_count times:
//!     name_len name_bytes(utf-8) ndim dims[ndim] values[prod(dims)]
//! ```
//!
//! Recognizer checkpoints store `embedding_dim = 0`.

use std::fs;
use std::path::Path;

use feds_core::recognizer::{RecognizerConfig, RecognizerNet};
use feds_core::surrogate::{SurrogateConfig, SurrogateNet};
use feds_core::{ParamStore, Tensor};

use crate::{FormatError, Result};

pub const MAGIC: &[u8; 4] = b"FEDS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub alphabet_size: usize,
    pub length: usize,
    pub embedding_dim: usize,
    pub params: ParamStore,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
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
            .ok_or_else(|| FormatError::malformed("checkpoint", "unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize);
        put_u32(&mut out, self.alphabet_size);
        put_u32(&mut out, self.length);
        put_u32(&mut out, self.embedding_dim);
        put_u32(&mut out, self.params.len());
        for (name, t) in self.params.iter() {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, 2);
            put_u32(&mut out, t.rows());
            put_u32(&mut out, t.cols());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(FormatError::malformed("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(FormatError::malformed("checkpoint", format!("unsupported version {version}")));
        }
        let alphabet_size = r.u32()?;
        let length = r.u32()?;
        let embedding_dim = r.u32()?;
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let n = r.u32()?;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| FormatError::malformed("checkpoint", "tensor name is not utf-8"))?
                .to_owned();
            let ndim = r.u32()?;
            let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let (rows, cols) = match dims[..] {
                [c] => (1, c),
                [r, c] => (r, c),
                _ => return Err(FormatError::malformed("checkpoint", format!("{ndim}-d tensor {name}"))),
            };
            let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.insert(name, Tensor::from_vec(rows, cols, data)?)?;
        }
        if r.pos != buf.len() {
            return Err(FormatError::malformed("checkpoint", "trailing bytes"));
        }
        Ok(Self {
            alphabet_size,
            length,
            embedding_dim,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn check(&self, alphabet_size: usize, length: usize, embedding_dim: usize) -> Result<()> {
        if (self.alphabet_size, self.length, self.embedding_dim) != (alphabet_size, length, embedding_dim) {
            return Err(feds_core::Error::Config(format!(
                "checkpoint is for |A|={}, L={}, d={}; configuration has |A|={alphabet_size}, L={length}, d={embedding_dim}",
                self.alphabet_size, self.length, self.embedding_dim
            ))
            .into());
        }
        Ok(())
    }
}

impl From<&RecognizerNet> for Checkpoint {
    fn from(net: &RecognizerNet) -> Self {
        Self {
            alphabet_size: net.config().alphabet_size,
            length: net.config().length,
            embedding_dim: 0,
            params: net.params().clone(),
        }
    }
}

impl From<&SurrogateNet> for Checkpoint {
    fn from(net: &SurrogateNet) -> Self {
        Self {
            alphabet_size: net.config().alphabet_size,
            length: net.config().length,
            embedding_dim: net.config().embedding_dim,
            params: net.params().clone(),
        }
    }
}

pub fn load_recognizer(path: impl AsRef<Path>, cfg: RecognizerConfig) -> Result<RecognizerNet> {
    let ck = Checkpoint::load(path)?;
    ck.check(cfg.alphabet_size, cfg.length, 0)?;
    Ok(RecognizerNet::from_params(cfg, ck.params)?)
}

pub fn load_surrogate(path: impl AsRef<Path>, cfg: SurrogateConfig) -> Result<SurrogateNet> {
    let ck = Checkpoint::load(path)?;
    ck.check(cfg.alphabet_size, cfg.length, cfg.embedding_dim)?;
    Ok(SurrogateNet::from_params(cfg, ck.params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::row(vec![1.5])).unwrap();
        let ck = Checkpoint {
            alphabet_size: 37,
            length: 8,
            embedding_dim: 128,
            params,
        };
        let b = ck.to_bytes();
        assert_eq!(&b[..4], b"FEDS");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &37u32.to_le_bytes());
        assert_eq!(&b[16..20], &128u32.to_le_bytes());
        assert_eq!(&b[b.len() - 8..], &1.5f64.to_le_bytes());
        assert_eq!(Checkpoint::from_bytes(&b).unwrap(), ck);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(Checkpoint::from_bytes(b"FEDX").is_err());
        let ck = Checkpoint {
            alphabet_size: 3,
            length: 2,
            embedding_dim: 0,
            params: ParamStore::new(),
        };
        let mut b = ck.to_bytes();
        b.push(0);
        assert!(Checkpoint::from_bytes(&b).is_err());
        assert!(Checkpoint::from_bytes(&b[..10]).is_err());
    }
}
