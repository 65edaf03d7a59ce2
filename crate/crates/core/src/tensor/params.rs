//! Named parameter sets and their binary checkpoint format.
//!
//! Layout (little-endian): magic `GSPK`, format version, element width tag,
//! entry count, then per entry a name, a shape, and the raw element bit
//! patterns; a trailing sha256 digest covers everything before it. Writes
//! are byte-deterministic for identical values, reads are bit-exact.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"GSPK";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a parameter checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u8),
    #[error("checkpoint holds {found}-byte elements, expected {expected}-byte")]
    DtypeMismatch { expected: usize, found: usize },
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint entry {name}: shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint is missing parameter {0}")]
    Missing(String),
    #[error("checkpoint has extra parameter {0}")]
    Extra(String),
}

/// Ordered collection of uniquely named trainable leaf tensors.
pub struct ParamSet<T: Scalar = f32> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    /// Register a trainable leaf and hand back a clone of its handle.
    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> Tensor<T> {
        assert!(
            tensor.requires_grad(),
            "ParamSet::add: {name} does not require gradients"
        );
        assert!(
            self.entries.iter().all(|(n, _)| n != name),
            "ParamSet::add: duplicate parameter name {name}"
        );
        self.entries.push((name.to_string(), tensor.clone()));
        tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Handles in registration order, the order optimizers index state by.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Serialize every entry in registration order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(T::BYTE_WIDTH as u8);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let nb = name.as_bytes();
            assert!(nb.len() <= u16::MAX as usize, "parameter name too long");
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data().iter() {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamsError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Parse a checkpoint into a fresh set of trainable leaves.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParamsError> {
        if bytes.len() < MAGIC.len() + 2 + 4 + 32 {
            return Err(ParamsError::Corrupt("file shorter than the fixed header".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let expect = Sha256::digest(body);
        if digest != expect.as_slice() {
            return Err(ParamsError::Corrupt("sha256 digest mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC.as_slice() {
            return Err(ParamsError::BadMagic);
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(ParamsError::BadVersion(version));
        }
        let width = r.u8()? as usize;
        if width != T::BYTE_WIDTH {
            return Err(ParamsError::DtypeMismatch { expected: T::BYTE_WIDTH, found: width });
        }
        let n_entries = r.u32()? as usize;
        let mut set = Self::new();
        let mut seen = HashSet::new();
        for _ in 0..n_entries {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ParamsError::Corrupt("non-utf8 parameter name".into()))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(ParamsError::Corrupt(format!("duplicate entry {name}")));
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let count: usize = shape.iter().product();
            let raw = r.take(count * T::BYTE_WIDTH)?;
            let data: Vec<T> = raw
                .chunks_exact(T::BYTE_WIDTH)
                .map(T::read_le)
                .collect();
            set.entries.push((name, Tensor::param(data, &shape)));
        }
        if r.pos != body.len() {
            return Err(ParamsError::Corrupt(format!(
                "{} trailing bytes after the last entry",
                body.len() - r.pos
            )));
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Copy checkpointed values into this set's existing tensors. Names and
    /// shapes must match exactly in both directions.
    pub fn load_values(&self, path: &Path) -> Result<(), ParamsError> {
        let loaded = Self::load(path)?;
        for (name, t) in &self.entries {
            let src = loaded
                .get(name)
                .ok_or_else(|| ParamsError::Missing(name.clone()))?;
            if src.shape() != t.shape() {
                return Err(ParamsError::ShapeMismatch {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            t.set_data(&src.to_vec());
        }
        for (name, _) in &loaded.entries {
            if self.get(name).is_none() {
                return Err(ParamsError::Extra(name.clone()));
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParamsError> {
        if self.pos + n > self.buf.len() {
            return Err(ParamsError::Corrupt(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ParamsError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ParamsError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ParamsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ParamsError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
