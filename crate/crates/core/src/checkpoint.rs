//! Binary checkpoint of a model's parameters and configuration.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SIGMACKP"  u32 version  u8 scalar bytes (4 or 8)
//! u64 len, config JSON
//! u32 tensor count, then per tensor:
//!   u32 len, name   u32 rank   u64 dims[rank]   raw scalars
//! ```

use std::path::Path;

use crate::config::{ModelConfig, Precision};
use crate::error::{Error, Result};
use crate::model::SigmaModel;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"SIGMACKP";
pub const VERSION: u32 = 1;

pub fn to_bytes<T: Scalar>(model: &SigmaModel<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    let cfg = serde_json::to_vec(&model.cfg)?;
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
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
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} too large")))
    }
}

/// Configuration and scalar precision stored in a checkpoint header.
pub fn peek(bytes: &[u8]) -> Result<(Precision, ModelConfig)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    header(&mut r)
}

fn header(r: &mut Reader<'_>) -> Result<(Precision, ModelConfig)> {
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let precision = match r.take(1)?[0] {
        4 => Precision::F32,
        8 => Precision::F64,
        b => return Err(Error::Checkpoint(format!("unknown scalar width {b}"))),
    };
    let n = r.u64()?;
    let cfg = serde_json::from_slice(r.take(n)?)?;
    Ok((precision, cfg))
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<SigmaModel<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (precision, cfg) = header(&mut r)?;
    let width = match precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    if width != T::BYTES {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {width}-byte scalars, {} requested",
            T::NAME
        )));
    }
    let mut model = SigmaModel::<T>::new(cfg, 0)?;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, model has {}",
            model.params.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let id = model
            .params
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
        if model.params.get(id).shape() != shape.as_slice() || seen[id.index()] {
            return Err(Error::Checkpoint(format!("tensor {name} has shape {shape:?} or repeats")));
        }
        seen[id.index()] = true;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * T::BYTES)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        *model.params.get_mut(id) = Tensor::new(shape, data)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save<T: Scalar>(model: &SigmaModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<SigmaModel<T>> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
