//! Flat embedding files: a 20-byte header followed by `count × dim` f32
//! values, all little-endian.
//!
//! | offset | size | field                 |
//! |--------|------|-----------------------|
//! | 0      | 4    | magic `b"VX2E"`       |
//! | 4      | 4    | dimension (u32)       |
//! | 8      | 8    | vector count (u64)    |
//! | 16     | 4    | reserved, zero        |
//! | 20     | …    | vectors, f32          |
//!
//! Used for per-frame embeddings consumed by the cosine oracle, for query
//! embeddings, and for raw token input to `prefill`.

use std::fs;
use std::path::Path;

use crate::error::{dimension, integrity, Result};

pub const MAGIC: &[u8; 4] = b"VX2E";
const HEADER_LEN: usize = 20;

pub fn encode(dim: usize, vectors: &[Vec<f32>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * dim * vectors.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(dimension(format!("vector {i} has {} entries, header says {dim}", v.len())));
        }
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Returns `(dim, vectors)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, Vec<Vec<f32>>)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(integrity("not a VX2E embedding file"));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if dim == 0 || body.len() != 4 * dim * count {
        return Err(integrity(format!(
            "embedding file holds {} payload bytes, header implies {count} vectors of {dim}",
            body.len()
        )));
    }
    let vectors = body
        .chunks_exact(4 * dim)
        .map(|row| row.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        .collect();
    Ok((dim, vectors))
}

pub fn write(path: &Path, dim: usize, vectors: &[Vec<f32>]) -> Result<()> {
    fs::write(path, encode(dim, vectors)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(usize, Vec<Vec<f32>>)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let v = vec![vec![1.0, -2.5, 3.25], vec![0.0, f32::MIN_POSITIVE, 7.0]];
        let bytes = encode(3, &v).unwrap();
        assert_eq!(bytes.len(), 20 + 24);
        assert_eq!(decode(&bytes).unwrap(), (3, v));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(encode(2, &[vec![1.0]]).is_err());
        let mut bytes = encode(2, &[vec![1.0, 2.0]]).unwrap();
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(crate::Error::Integrity(_))));
        assert!(decode(b"nope").is_err());
    }
}
