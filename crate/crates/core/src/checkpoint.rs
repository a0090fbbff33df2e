//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"VIOCKPT\0"
//! version  u32      currently 1
//! n_groups u32
//! per group:
//!   name_len  u32, name bytes (utf-8)
//!   trainable u8 (0/1)
//!   n_tensors u32
//!   per tensor:
//!     rank u32, dims u32 * rank, data f32-LE * prod(dims)
//! ```
//!
//! Roundtrips are bit-exact: floats are written as their raw bits.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::optim::ParamGroup;
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"VIOCKPT\0";
const VERSION: u32 = 1;

pub fn write_groups<W: Write>(w: &mut W, groups: &[&ParamGroup]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(groups.len() as u32).to_le_bytes())?;
    for group in groups {
        let name = group.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[group.trainable as u8])?;
        w.write_all(&(group.tensors.len() as u32).to_le_bytes())?;
        for t in &group.tensors {
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_groups<R: Read>(r: &mut R) -> Result<Vec<ParamGroup>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_groups = read_u32(r)? as usize;
    let mut groups = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint("group name too long".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("group name is not utf-8".into()))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let n_tensors = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("implausible rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut buf = vec![0u8; numel * 4];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        groups.push(ParamGroup::new(name, tensors, flag[0] != 0));
    }
    Ok(groups)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_groups(&mut w, &params.groups())?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    ModelParams::from_groups(read_groups(&mut r)?)
}

/// SHA-256 over all four groups of a model.
pub fn model_digest(params: &ModelParams) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for group in params.groups() {
        hasher.update(group_digest(group));
    }
    hasher.finalize().into()
}

/// SHA-256 of a group's raw parameter bits; used by freeze checks.
pub fn group_digest(group: &ParamGroup) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(group.name.as_bytes());
    for t in &group.tensors {
        for &d in t.shape() {
            hasher.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.finalize().into()
}
