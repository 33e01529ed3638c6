//! IDX container (the MNIST distribution format).
//!
//! Layout: a big-endian `u32` magic `0x0000_08DD` where `08` marks unsigned
//! bytes and `DD` is the number of dimensions, then `DD` big-endian `u32`
//! dimension sizes, then the payload in row-major order.

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const UBYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8], name: &str) -> Result<IdxTensor> {
    let be_u32 = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::format(name, format!("truncated header at byte offset {offset}")))
    };
    let magic = be_u32(0)?;
    let [z0, z1, dtype, ndim] = magic.to_be_bytes();
    if z0 != 0 || z1 != 0 || dtype != UBYTE || ndim == 0 {
        return Err(Error::format(name, format!("bad magic 0x{magic:08x} at byte offset 0")));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for k in 0..ndim as usize {
        dims.push(be_u32(4 + 4 * k)? as usize);
    }
    let header = 4 + 4 * ndim as usize;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::format(
            name,
            format!(
                "payload at byte offset {header} has {} bytes, dims {:?} need {expected}",
                payload.len(),
                dims
            ),
        ));
    }
    Ok(IdxTensor {
        dims,
        data: payload.to_vec(),
    })
}

fn read(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, &path.display().to_string())
}

/// Images (3-d, `0x00000803`) flattened per item and scaled to `[0, 1]`,
/// paired with a label vector (`0x00000801`).
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img = read(images)?;
    let lab = read(labels)?;
    let img_name = images.display().to_string();
    let lab_name = labels.display().to_string();
    if img.dims.len() != 3 {
        return Err(Error::format(
            img_name,
            format!("expected 3 image dimensions at byte offset 0, got {}", img.dims.len()),
        ));
    }
    if lab.dims.len() != 1 {
        return Err(Error::format(
            lab_name,
            format!("expected 1 label dimension at byte offset 0, got {}", lab.dims.len()),
        ));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::format(
            lab_name,
            format!(
                "label count {} at byte offset 4 does not match image count {}",
                lab.dims[0], img.dims[0]
            ),
        ));
    }
    let n = img.dims[0];
    let width = img.dims[1] * img.dims[2];
    let inputs = Matrix::from_vec(n, width, img.data.iter().map(|&b| f64::from(b) / 255.0).collect())?;
    let labels: Vec<usize> = lab.data.iter().map(|&b| usize::from(b)).collect();
    let class_count = labels.iter().max().map_or(1, |&m| m + 1);
    Dataset::new(inputs, labels, class_count, split, img_name)
}
