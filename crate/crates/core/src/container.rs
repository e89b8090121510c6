//! Single-file container: a JSON manifest followed by a flat payload of
//! little-endian `f64` values.
//!
//! ```text
//! magic        8 bytes
//! version      u32 LE
//! manifest_len u64 LE
//! manifest     manifest_len bytes of UTF-8 JSON
//! payload_len  u64 LE (number of f64 values)
//! payload      payload_len * 8 bytes
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::write_atomic;

pub const MAGIC_LEN: usize = 8;

pub fn encode(magic: &[u8; MAGIC_LEN], version: u32, manifest: &[u8], payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC_LEN + 20 + manifest.len() + 8 * payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("truncated at byte {}", self.bytes.len())))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Returns the manifest bytes and payload, checking magic and version.
pub fn decode<'a>(
    bytes: &'a [u8],
    magic: &[u8; MAGIC_LEN],
    version: u32,
) -> Result<(&'a [u8], Vec<f64>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC_LEN)? != magic {
        return Err(Error::Corrupt(format!(
            "bad magic, expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let found = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if found != version {
        return Err(Error::IncompatibleFormat(format!(
            "format version {found}, this build reads version {version}"
        )));
    }
    let manifest_len = cur.u64()? as usize;
    let manifest = cur.take(manifest_len)?;
    let n = cur.u64()? as usize;
    let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("payload length overflow".into()))?)?;
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let payload = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((manifest, payload))
}

pub fn write_file(path: &Path, magic: &[u8; MAGIC_LEN], version: u32, manifest: &[u8], payload: &[f64]) -> Result<()> {
    write_atomic(path, &encode(magic, version, manifest, payload))
}
