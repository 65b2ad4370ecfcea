//! On-disk dump of per-point context descriptors.
//!
//! Layout, little-endian: `u32` row count, `u32` descriptor width, then
//! `rows * dim` f32 values in row-major order. Descriptors live in `[0, 1]`
//! and come from small integer ratios, so the f32 narrowing loses little;
//! the dump is meant for inspection and for handing features to other
//! tooling, not as a lossless cache.

use std::fs;
use std::path::Path;

use scribbleseg_core::PlsMatrix;

use crate::error::{io_at, PipelineError, Result};

pub fn encode_descriptors(m: &PlsMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + m.rows() * m.dim() * 4);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_descriptors(path: &Path, bytes: &[u8]) -> Result<PlsMatrix> {
    let fail = |detail: String| PipelineError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 8 {
        return Err(fail(format!("{} bytes is too short for a header", bytes.len())));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expect = 8 + rows.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or_else(
        || fail(format!("header claims an impossible {rows} x {dim} matrix")),
    )?;
    if bytes.len() != expect {
        return Err(fail(format!(
            "{rows} x {dim} matrix needs {expect} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(PlsMatrix::from_data(rows, dim, data))
}

pub fn save_descriptors(path: &Path, m: &PlsMatrix) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_at(parent))?;
    }
    fs::write(path, encode_descriptors(m)).map_err(io_at(path))
}

pub fn load_descriptors(path: &Path) -> Result<PlsMatrix> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    decode_descriptors(path, &bytes)
}
