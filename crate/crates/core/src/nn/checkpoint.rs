//! Versioned binary parameter container.
//!
//! Layout: the 6-byte magic `MUNET1`, then for every block in order
//! `u32 name_len | name (UTF-8) | u32 rank | rank x u64 dims | f64 payload`,
//! all integers and floats little-endian. The block list ends at end of file.

use serde::Serialize;

use super::params::BlockRef;
use crate::{Error, Result};

pub const MAGIC_PREFIX: &[u8; 5] = b"MUNET";
pub const FORMAT_VERSION: u8 = b'1';

#[derive(Clone, Debug, PartialEq)]
pub struct NamedBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode_blocks<'a>(blocks: impl IntoIterator<Item = BlockRef<'a>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_PREFIX);
    out.push(FORMAT_VERSION);
    for b in blocks {
        debug_assert_eq!(b.shape.iter().product::<usize>(), b.data.len());
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
        for &d in &b.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in b.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_blocks(bytes: &[u8]) -> Result<Vec<NamedBlock>> {
    if bytes.len() < 6 || &bytes[..5] != MAGIC_PREFIX {
        return Err(Error::Checkpoint("missing MUNET magic string".into()));
    }
    if bytes[5] != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version '{}' (expected '{}')",
            bytes[5] as char, FORMAT_VERSION as char
        )));
    }
    let mut cur = Cursor { bytes, pos: 6 };
    let mut blocks = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?
            .to_owned();
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("dimension")? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = cur.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("block too large".into()))?, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.push(NamedBlock { name, shape, data });
    }
    Ok(blocks)
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    name: &'a str,
    shape: &'a [usize],
}

/// JSON listing of block names and shapes in checkpoint order.
pub fn manifest_json<'a>(blocks: impl IntoIterator<Item = BlockRef<'a>>) -> String {
    let blocks: Vec<BlockRef<'a>> = blocks.into_iter().collect();
    let entries: Vec<ManifestEntry> = blocks
        .iter()
        .map(|b| ManifestEntry {
            name: &b.name,
            shape: &b.shape,
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "format": "MUNET1",
        "blocks": entries,
    }))
    .expect("manifest serialization is infallible")
}
