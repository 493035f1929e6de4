//! IDX tensors: two zero bytes, an element-type code, the rank, big-endian
//! u32 dimensions, then the big-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

fn width(code: u8) -> Option<usize> {
    match code {
        0x08 | 0x09 => Some(1),
        0x0B => Some(2),
        0x0C | 0x0D => Some(4),
        0x0E => Some(8),
        _ => None,
    }
}

pub fn parse_idx(bytes: &[u8], file: &str) -> Result<IdxArray> {
    let err = |offset: usize, msg: String| LabError::Parse {
        file: file.to_string(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 4 {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(err(
            0,
            format!("bad magic {:02x}{:02x}", bytes[0], bytes[1]),
        ));
    }
    let code = bytes[2];
    let w = width(code).ok_or_else(|| err(2, format!("unknown element type 0x{code:02x}")))?;
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(err(3, "rank 0".into()));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(err(bytes.len(), "truncated dimensions".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| err(4, "dimensions overflow".into()))?;
    let expected = count.checked_mul(w).and_then(|n| n.checked_add(header));
    if expected != Some(bytes.len()) {
        return Err(err(
            bytes.len().min(header),
            format!(
                "payload is {} bytes, dimensions {dims:?} need {}",
                bytes.len() - header,
                count.saturating_mul(w)
            ),
        ));
    }
    let values = decode(&bytes[header..], code);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(err(header + i * w, "non-finite value".into()));
    }
    Ok(IdxArray { dims, values })
}

fn decode(body: &[u8], code: u8) -> Vec<f64> {
    match code {
        0x08 => body.iter().map(|&b| b as f64).collect(),
        0x09 => body.iter().map(|&b| b as i8 as f64).collect(),
        0x0B => body
            .chunks_exact(2)
            .map(|c| i16::from_be_bytes([c[0], c[1]]) as f64)
            .collect(),
        0x0C => body
            .chunks_exact(4)
            .map(|c| i32::from_be_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        0x0D => body
            .chunks_exact(4)
            .map(|c| f32::from_be_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        _ => body
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(LabError::io(path))?;
    parse_idx(&bytes, &path.display().to_string())
}

/// Images `[n, ...]` and labels `[n]`; returns flat features, labels and the
/// per-sample shape.
pub fn read_pair(images: &Path, labels: &Path) -> Result<(Vec<f64>, Vec<usize>, Vec<usize>)> {
    let x = read_idx(images)?;
    let y = read_idx(labels)?;
    let label_file = labels.display().to_string();
    if y.dims.len() != 1 {
        return Err(LabError::Schema(format!(
            "{label_file}: labels must be rank 1, got {:?}",
            y.dims
        )));
    }
    if x.dims.len() < 2 || x.dims[0] != y.dims[0] {
        return Err(LabError::Schema(format!(
            "{}: image dims {:?} do not match {} labels",
            images.display(),
            x.dims,
            y.dims[0]
        )));
    }
    let labels = y
        .values
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(LabError::Schema(format!(
                    "{label_file}: label {v} is not a class index"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((x.values, labels, x.dims[1..].to_vec()))
}

/// Unsigned-byte IDX encoding, used for fixtures and exports.
pub fn encode_u8(dims: &[usize], values: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(values);
    out
}
