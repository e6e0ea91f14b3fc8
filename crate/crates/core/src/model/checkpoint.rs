//! Binary checkpoint format:
//!
//! ```text
//! "PNCT" | version u32 | config: u32 length + UTF-8 text | tensor count u32 |
//! per tensor: u32 length + UTF-8 name, rank u32, dims u32 x rank, f32 LE payload
//! ```
//!
//! All integers are little-endian.

use std::path::Path;

use super::config::ModelConfig;
use super::network::Model;
use crate::error::{CheckpointError, Error, Result};
use crate::nn::Tensor;

pub const MAGIC: [u8; 4] = *b"PNCT";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * model.parameter_count());
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_str(&mut out, &model.config().to_text());
    let params = model.parameters();
    put_u32(&mut out, params.len());
    for p in params {
        put_str(&mut out, &p.name);
        put_u32(&mut out, p.value.shape().len());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Config("string is not UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model<f32>, CheckpointError> {
    let mut r = Reader { bytes };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionSkew {
            found: version,
            expected: VERSION,
        });
    }
    let config = ModelConfig::from_text(&r.string()?).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| {
            CheckpointError::ShapeMismatch {
                name: name.clone(),
                message: format!("shape {shape:?} overflows"),
            }
        })?;
        let payload = r.take(len.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::from_vec(&shape, data).expect("payload length matches shape");
        tensors.push((name, tensor));
    }
    if !r.bytes.is_empty() {
        return Err(CheckpointError::TrailingBytes(r.bytes.len()));
    }
    Model::from_parameters(config, tensors)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(decode(&bytes)?)
}
