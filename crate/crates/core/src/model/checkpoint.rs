//! Binary encoder checkpoint.
//!
//! ```text
//! "VSLG"  u32 version  u32 layer_count
//! per layer:  u32 name_len  name  u32 rank  u32 dims[rank]  f64 weights  f64 bias[dims[0]]
//! ```
//!
//! Little-endian. Only the encoder body is stored; velocities and freeze
//! flags are training state and start fresh after a load.

use std::fs;
use std::path::Path;

use super::encoder::{Architecture, EncoderParams};
use crate::corpus::Reader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VSLG";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_LAYERS: u32 = 64;
const MAX_NAME: u32 = 256;
const MAX_RANK: u32 = 8;

pub fn checkpoint_to_bytes(params: &EncoderParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());
    for l in params.layers() {
        out.extend_from_slice(&(l.name.len() as u32).to_le_bytes());
        out.extend_from_slice(l.name.as_bytes());
        let shape = l.weight.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in l.weight.value.data().iter().chain(l.bias.value.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Raw layers as stored: `(name, weight, bias)`.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor, Tensor)>> {
    let mut r = Reader::new(bytes);
    let magic = r.array::<4>("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32("layer count")?;
    if count > MAX_LAYERS {
        return Err(Error::Malformed(format!("{count} layers exceeds limit {MAX_LAYERS}")));
    }
    let mut layers = Vec::new();
    for _ in 0..count {
        let name_len = r.u32("layer name length")?;
        if name_len > MAX_NAME {
            return Err(Error::Malformed(format!("layer name of {name_len} bytes")));
        }
        let name = std::str::from_utf8(r.take(name_len as usize, "layer name")?)
            .map_err(|_| Error::Malformed("layer name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Malformed(format!("layer `{name}` has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        if dims.contains(&0) {
            return Err(Error::Malformed(format!("layer `{name}` has a zero dimension {dims:?}")));
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_add(dims[0]))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or(Error::Truncated("layer values"))?;
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(r.f64("layer values")?);
        }
        let bias = values.split_off(numel - dims[0]);
        layers.push((name, Tensor::new(dims.clone(), values)?, Tensor::new(vec![dims[0]], bias)?));
    }
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(layers)
}

/// Decode and check every layer against `arch`.
pub fn checkpoint_from_bytes(bytes: &[u8], arch: Architecture) -> Result<EncoderParams> {
    EncoderParams::from_tensors(arch, parse_checkpoint(bytes)?)
}

pub fn save_checkpoint(params: &EncoderParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>, arch: Architecture) -> Result<EncoderParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, arch)
}
