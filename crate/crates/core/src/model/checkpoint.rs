//! Versioned binary checkpoint container.
//!
//! Layout (little endian): magic `MCNETCKP`, `u32` version, `u32` length of a
//! JSON metadata block echoing the configuration, the JSON block, `u32`
//! tensor count, then per tensor: `u32` name length, name, `u32` rank,
//! `u64` dims, and `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::McNetParams;
use crate::error::{Error, Result};
use crate::stft::StftConfig;

const MAGIC: &[u8; 8] = b"MCNETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub stft: StftConfig,
    /// Online normalization window length in frames.
    pub smoothing_len: usize,
    pub epoch: Option<usize>,
    pub dev_loss: Option<f64>,
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &McNetParams) -> Result<()> {
    params.check_against(&meta.model)?;
    let json = serde_json::to_vec(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(params.num_params() * 8 + json.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    let tensors = params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Loads a checkpoint, rejecting it when `expected` is given and differs from
/// the stored model configuration.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<(CheckpointMeta, McNetParams)> {
    let mut raw = Vec::new();
    fs::File::open(path)?.read_to_end(&mut raw)?;
    let mut cur = Cursor { buf: &raw, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let json_len = cur.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(cur.take(json_len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    meta.model.validate()?;
    if let Some(exp) = expected {
        if exp != &meta.model {
            return Err(Error::Checkpoint(format!(
                "checkpoint configuration {:?} does not match expected {:?}",
                meta.model, exp
            )));
        }
    }
    let mut params = McNetParams::zeros(&meta.model);
    let layout: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    let count = cur.u32()? as usize;
    if count != layout.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {count} tensors, configuration implies {}",
            layout.len()
        )));
    }
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(count);
    for (name, shape) in &layout {
        let n = cur.u32()? as usize;
        let got_name = std::str::from_utf8(cur.take(n)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u64()? as usize);
        }
        if got_name != name || &dims != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {got_name} {dims:?} does not match expected {name} {shape:?}"
            )));
        }
        let len: usize = dims.iter().product();
        let bytes = cur.take(len * 8)?;
        values.push(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
    }
    if cur.pos != raw.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    for (dst, src) in params.slices_mut().into_iter().zip(values.iter()) {
        dst.copy_from_slice(src);
    }
    Ok((meta, params))
}
