//! Native dataset container.
//!
//! ```text
//! magic     b"TSDS"
//! version   u32 LE (= 1)
//! rows      u64 LE
//! cols      u64 LE
//! classes   u64 LE
//! split     u8 (0 train, 1 validation)
//! id_len    u32 LE, then id_len bytes of UTF-8 source id
//! inputs    rows*cols f64 LE, row-major
//! labels    rows u32 LE
//! ```

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 4] = b"TSDS";
const VERSION: u32 = 1;

pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let id = d.source_id().as_bytes();
    let mut out = Vec::with_capacity(33 + id.len() + d.len() * (d.input_dim() * 8 + 4));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d.len() as u64).to_le_bytes());
    out.extend_from_slice(&(d.input_dim() as u64).to_le_bytes());
    out.extend_from_slice(&(d.class_count() as u64).to_le_bytes());
    out.push(match d.split() {
        Split::Train => 0,
        Split::Validation => 1,
    });
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    for v in d.inputs().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &y in d.labels() {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.name,
                format!("truncated at byte offset {} (wanted {n} bytes)", self.pos),
            )),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8], name: &str) -> Result<Dataset> {
    let mut c = Cursor { bytes, pos: 0, name };
    if c.take(4)? != MAGIC {
        return Err(Error::format(name, "bad magic at byte offset 0"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(
            name,
            format!("unsupported version {version} at byte offset 4"),
        ));
    }
    let rows = c.u64()? as usize;
    let cols = c.u64()? as usize;
    let classes = c.u64()? as usize;
    let split = match c.take(1)?[0] {
        0 => Split::Train,
        1 => Split::Validation,
        other => return Err(Error::format(name, format!("bad split tag {other} at byte offset 28"))),
    };
    let id_len = c.u32()? as usize;
    let id = std::str::from_utf8(c.take(id_len)?)
        .map_err(|_| Error::format(name, "source id is not UTF-8"))?
        .to_owned();
    let cells = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format(name, "dimension overflow"))?;
    let data = c
        .take(cells)?
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = c
        .take(rows * 4)?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    if c.pos != bytes.len() {
        return Err(Error::format(
            name,
            format!("{} trailing bytes at byte offset {}", bytes.len() - c.pos, c.pos),
        ));
    }
    Dataset::new(Matrix::from_vec(rows, cols, data)?, labels, classes, split, id)
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(d)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, &path.display().to_string())
}
