//! Binary checkpoint format, bit-exact on round trip.
//!
//! Layout, all integers little-endian:
//!   magic "CBDT" | version u32 | config JSON (u64 length + UTF-8)
//!   | tensor count u32 | per tensor: name (u32 length + UTF-8),
//!     rank u32, dims (u32 each), data (f32 LE).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::detector::{DetectorConfig, WeightSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CBDT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hard cap on a single tensor's element count; catches corrupt dims before
/// they turn into huge allocations.
const MAX_TENSOR_ELEMS: u64 = 1 << 30;

pub fn save_checkpoint(
    weights: &WeightSet<f32>,
    config: &DetectorConfig,
    path: &Path,
) -> Result<()> {
    weights.validate_for(config)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let config_json = serde_json::to_vec(config)?;
    w.write_all(&(config_json.len() as u64).to_le_bytes())?;
    w.write_all(&config_json)?;
    w.write_all(&(weights.len() as u32).to_le_bytes())?;
    for (name, tensor) in weights.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::CorruptCheckpoint("truncated file".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, what: &str) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 4096 {
        return Err(Error::CorruptCheckpoint(format!("{what} length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::CorruptCheckpoint(format!("{what} is not UTF-8")))
}

pub fn load_checkpoint(path: &Path) -> Result<(WeightSet<f32>, DetectorConfig)> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    if r.read_exact(&mut magic).is_err() || magic != CHECKPOINT_MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let json_len = read_u64(&mut r)? as usize;
    if json_len > 1 << 20 {
        return Err(Error::CorruptCheckpoint("config blob too large".into()));
    }
    let mut json = vec![0u8; json_len];
    read_exact(&mut r, &mut json)?;
    let config: DetectorConfig = serde_json::from_slice(&json)
        .map_err(|e| Error::CorruptCheckpoint(format!("bad config JSON: {e}")))?;

    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(&mut r, "tensor name")?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::CorruptCheckpoint(format!("rank {rank} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let d = read_u32(&mut r)? as u64;
            elems = elems.saturating_mul(d);
            if elems > MAX_TENSOR_ELEMS {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor {name:?} dimension overflow"
                )));
            }
            shape.push(d as usize);
        }
        let mut data = vec![0f32; elems as usize];
        for v in &mut data {
            let mut b = [0u8; 4];
            read_exact(&mut r, &mut b)?;
            *v = f32::from_le_bytes(b);
        }
        entries.push((name, Tensor::from_vec(&shape, data)));
    }

    let weights = WeightSet::from_entries(entries)?;
    // Tensor names must match the embedded config's expectations exactly.
    weights.validate_for(&config)?;
    Ok((weights, config))
}
