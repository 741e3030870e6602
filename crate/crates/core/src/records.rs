//! Binary record-container framing shared by checkpoints and dataset
//! exports.
//!
//! Layout: an 8-byte magic, a little-endian `u32` version, then repeated
//! records — name length `u32`, UTF-8 name, rank `u32`, one `u32` extent
//! per dimension, then `prod(extents)` little-endian `f32` payload values —
//! and a trailing CRC32 of every preceding byte.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{err, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEMCKPT1";
pub const DATASET_MAGIC: &[u8; 8] = b"SEMDATA1";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub extents: Vec<usize>,
    pub payload: Vec<f32>,
}

impl Record {
    pub fn new(name: impl Into<String>, extents: Vec<usize>, payload: Vec<f32>) -> Result<Self> {
        let numel: usize = extents.iter().product();
        if numel != payload.len() {
            return Err(err!(
                Dim,
                "record extents {:?} imply {} values, payload has {}",
                extents,
                numel,
                payload.len()
            ));
        }
        Ok(Record { name: name.into(), extents, payload })
    }
}

pub fn write_container(magic: &[u8; 8], version: u32, records: &[Record]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&version.to_le_bytes());
    for r in records {
        buf.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(r.name.as_bytes());
        buf.extend_from_slice(&(r.extents.len() as u32).to_le_bytes());
        for &e in &r.extents {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in &r.payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(err!(Format, "truncated container at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_container(
    magic: &[u8; 8],
    expected_version: u32,
    bytes: &[u8],
) -> Result<Vec<Record>> {
    if bytes.len() < 8 + 4 + 4 {
        return Err(err!(Format, "container too short ({} bytes)", bytes.len()));
    }
    if &bytes[..8] != magic {
        return Err(err!(Format, "bad magic {:?}", &bytes[..8]));
    }
    let body_end = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes([
        bytes[body_end],
        bytes[body_end + 1],
        bytes[body_end + 2],
        bytes[body_end + 3],
    ]);
    let crc = crc32fast::hash(&bytes[..body_end]);
    if crc != stored_crc {
        return Err(err!(Format, "CRC mismatch: stored {stored_crc:#010x}, computed {crc:#010x}"));
    }
    let mut cur = Cursor { bytes: &bytes[..body_end], pos: 8 };
    let version = cur.u32()?;
    if version != expected_version {
        return Err(err!(Version, "container version {version}, expected {expected_version}"));
    }
    let mut records = Vec::new();
    while cur.pos < body_end {
        let name_len = cur.u32()? as usize;
        let name_bytes = cur.take(name_len)?;
        let name = core::str::from_utf8(name_bytes)
            .map_err(|_| err!(Format, "record name is not UTF-8"))?;
        let rank = cur.u32()? as usize;
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(cur.u32()? as usize);
        }
        let numel: usize = extents.iter().product();
        let mut payload = Vec::with_capacity(numel);
        for _ in 0..numel {
            let b = cur.take(4)?;
            payload.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        }
        records.push(Record { name: String::from(name), extents, payload });
    }
    Ok(records)
}
