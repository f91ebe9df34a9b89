//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "SATLCKPT"
//! version  u32
//! header   u32 length + JSON {model, step, seed}
//! segments u32 count, then per segment: u16 name length, name, u64 start, u64 len
//! payload  u64 count, then count little-endian f32
//! checksum 32-byte SHA-256 of everything above
//! ```
//!
//! Parameters are computed in `f64` but stored as `f32`, so a save/load
//! round trip is exact for vectors whose entries are `f32`-representable
//! (as produced by [`crate::model::init_params`] and the trainer).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Layout, ModelConfig, ParamVector, Segment};

pub const MAGIC: &[u8; 8] = b"SATLCKPT";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub step: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamVector,
}

pub fn encode_checkpoint(meta: &CheckpointMeta, params: &ParamVector) -> Result<Vec<u8>> {
    encode_with_version(meta, params, VERSION)
}

fn encode_with_version(
    meta: &CheckpointMeta,
    params: &ParamVector,
    version: u32,
) -> Result<Vec<u8>> {
    let layout = Layout::new(&meta.model)?;
    if layout.total != params.len() {
        return Err(Error::Invalid(format!(
            "parameter count {} does not match config ({})",
            params.len(),
            layout.total
        )));
    }
    let header =
        serde_json::to_vec(meta).map_err(|e| Error::format("checkpoint header", e.to_string()))?;
    let mut out = Vec::with_capacity(64 + header.len() + params.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.segments.len() as u32).to_le_bytes());
    for seg in &params.segments {
        out.extend_from_slice(&(seg.name.len() as u16).to_le_bytes());
        out.extend_from_slice(seg.name.as_bytes());
        out.extend_from_slice(&(seg.start as u64).to_le_bytes());
        out.extend_from_slice(&(seg.len as u64).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &v in &params.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format("checkpoint", "unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
        return Err(Error::Checksum);
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != stored {
        return Err(Error::Checksum);
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let header_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::format("checkpoint header", e.to_string()))?;
    let n_segments = r.u32()? as usize;
    let mut segments = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format("checkpoint", "segment name is not UTF-8"))?
            .to_string();
        let start = r.u64()? as usize;
        let len = r.u64()? as usize;
        segments.push(Segment { name, start, len });
    }
    let count = r.u64()? as usize;
    let payload = r.take(
        count
            .checked_mul(4)
            .ok_or_else(|| Error::format("checkpoint", "bad count"))?,
    )?;
    if r.pos != body.len() {
        return Err(Error::format(
            "checkpoint",
            "trailing bytes before checksum",
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let params = ParamVector { values, segments };
    let layout = Layout::new(&meta.model)?;
    if layout.segments != params.segments {
        return Err(Error::format(
            "checkpoint",
            "segment table does not match model config",
        ));
    }
    params.check_segments()?;
    if !params.all_finite() {
        return Err(Error::NonFinite("checkpoint payload".into()));
    }
    Ok(Checkpoint { meta, params })
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ParamVector) -> Result<()> {
    let bytes = encode_checkpoint(meta, params)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
