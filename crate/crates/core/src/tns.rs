//! `TNS1` tensor files.
//!
//! Layout: the ASCII magic `TNS1`, a little-endian `u32` rank, `rank`
//! little-endian `u32` dimensions, then the values as little-endian IEEE-754
//! `f32` in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor4};

const MAGIC: &[u8; 4] = b"TNS1";

pub fn encode(dims: &[usize], values: &[f64]) -> Result<Vec<u8>> {
    let expected: usize = dims.iter().product();
    if expected != values.len() {
        return Err(Error::invalid(format!(
            "dims {dims:?} need {expected} values, got {}",
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses a `TNS1` buffer; `origin` only labels errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = |msg: String| Error::format(origin, msg);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("not a TNS1 file (bad magic bytes)".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let rank = word(4) as usize;
    let header = 8 + 4 * rank;
    if bytes.len() < header {
        return Err(bad(format!("truncated header for rank {rank}")));
    }
    let dims: Vec<usize> = (0..rank).map(|r| word(8 + 4 * r) as usize).collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad(format!("dims {dims:?} overflow")))?;
    if bytes.len() != header + 4 * count {
        return Err(bad(format!(
            "dims {dims:?} need {} payload bytes, found {}",
            4 * count,
            bytes.len() - header
        )));
    }
    let values = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect::<Vec<_>>();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("payload contains non-finite values".into()));
    }
    Ok((dims, values))
}

pub fn write(path: &Path, dims: &[usize], values: &[f64]) -> Result<()> {
    let bytes = encode(dims, values)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_tensor(path: &Path, t: &Tensor4) -> Result<()> {
    write(path, &t.shape().dims(), t.data())
}

pub fn read_tensor(path: &Path) -> Result<Tensor4> {
    let (dims, values) = read(path)?;
    if dims.len() != 4 {
        return Err(Error::format(path, format!("expected rank 4, found rank {}", dims.len())));
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    Tensor4::from_vec(shape, values).map_err(|e| Error::format(path, e.to_string()))
}
