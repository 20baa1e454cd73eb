//! Binary container for per-slide embedding matrices.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   4 bytes  "PEMB"
//! version u32      1
//! n_tiles u32
//! dim     u32
//! reserved u64     0
//! coords  n_tiles x (x: u32, y: u32)
//! values  n_tiles x dim x f32, row-major
//! ```
//!
//! Reads validate the magic, version, and declared lengths against the byte
//! count before touching the payload; writes reject non-finite values.
//! Write-then-read is bit-exact.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error as CrateError, Result};

use super::EmbeddingMatrix;

pub const MAGIC: [u8; 4] = *b"PEMB";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 24;

/// Container violations, one kind per corruption class.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {found}")]
    BadVersion { found: u32 },
    #[error("length mismatch: declared {expected} bytes, found {actual}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
}

/// Exact byte length of a serialized matrix.
pub fn encoded_len(n_tiles: u64, dim: u64) -> u64 {
    HEADER_LEN + n_tiles * 8 + n_tiles * dim * 4
}

/// Serialize a matrix to bytes. Non-finite values are rejected up front.
pub fn write_embeddings(matrix: &EmbeddingMatrix) -> Result<Vec<u8>> {
    matrix.validate()?;
    let n = matrix.n_tiles() as u64;
    let mut out = Vec::with_capacity(encoded_len(n, u64::from(matrix.dim)) as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.n_tiles() as u32).to_le_bytes());
    out.extend_from_slice(&matrix.dim.to_le_bytes());
    out.extend_from_slice(&0u64.to_le_bytes());
    for &(x, y) in &matrix.coords {
        out.extend_from_slice(&x.to_le_bytes());
        out.extend_from_slice(&y.to_le_bytes());
    }
    for &v in &matrix.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_embeddings_file(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let bytes = write_embeddings(matrix)?;
    fs::write(path, bytes).map_err(|e| CrateError::io(path, e))
}

/// Parse a matrix from bytes; the slide id comes from the caller (the file
/// name carries it on disk).
pub fn read_embeddings(bytes: &[u8], slide_id: &str) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN as usize {
        return Err(FormatError::LengthMismatch {
            expected: HEADER_LEN,
            actual: bytes.len() as u64,
        }
        .into());
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic }.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::BadVersion { found: version }.into());
    }
    let n_tiles = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let expected = encoded_len(u64::from(n_tiles), u64::from(dim));
    if bytes.len() as u64 != expected {
        return Err(FormatError::LengthMismatch {
            expected,
            actual: bytes.len() as u64,
        }
        .into());
    }
    if n_tiles == 0 {
        return Err(CrateError::InvalidInput("embedding matrix declares zero tiles".into()));
    }

    let n = n_tiles as usize;
    let d = dim as usize;
    let mut coords = Vec::with_capacity(n);
    let mut offset = HEADER_LEN as usize;
    for _ in 0..n {
        let x = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        let y = u32::from_le_bytes(bytes[offset + 4..offset + 8].try_into().unwrap());
        coords.push((x, y));
        offset += 8;
    }
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n * d {
        let v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite { index: i }.into());
        }
        values.push(v);
        offset += 4;
    }
    Ok(EmbeddingMatrix {
        slide_id: slide_id.to_string(),
        dim,
        coords,
        values,
    })
}

/// Read a matrix file; the slide id is the file stem.
pub fn read_embeddings_file(path: &Path) -> Result<EmbeddingMatrix> {
    let slide_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CrateError::InvalidInput(format!("bad embedding path {}", path.display())))?
        .to_string();
    let bytes = fs::read(path).map_err(|e| CrateError::io(path, e))?;
    read_embeddings(&bytes, &slide_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n: usize, dim: u32, fill: impl Fn(usize) -> f32) -> EmbeddingMatrix {
        EmbeddingMatrix {
            slide_id: "m".into(),
            dim,
            coords: (0..n).map(|k| (k as u32 * 224, 0)).collect(),
            values: (0..n * dim as usize).map(fill).collect(),
        }
    }

    fn kind(err: CrateError) -> FormatError {
        match err {
            CrateError::Format(f) => f,
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn one_tile_round_trip_is_identity() {
        let m = matrix(1, 4, |i| i as f32 - 1.5);
        let bytes = write_embeddings(&m).unwrap();
        let back = read_embeddings(&bytes, "m").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_payload_fails_with_length_mismatch() {
        let m = matrix(3, 8, |i| i as f32);
        let mut bytes = write_embeddings(&m).unwrap();
        bytes.truncate(bytes.len() - 5);
        match kind(read_embeddings(&bytes, "m").unwrap_err()) {
            FormatError::LengthMismatch { .. } => {}
            other => panic!("wrong kind: {other}"),
        }
    }

    #[test]
    fn size_formula_matches_layout() {
        let m = matrix(1000, 384, |i| (i % 97) as f32 * 0.25);
        let bytes = write_embeddings(&m).unwrap();
        assert_eq!(bytes.len() as u64, 24 + 1000 * 8 + 1000 * 384 * 4);
        assert_eq!(bytes.len() as u64, encoded_len(1000, 384));
    }

    #[test]
    fn corruption_classes_have_distinct_kinds() {
        let m = matrix(2, 3, |i| i as f32);
        let good = write_embeddings(&m).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            kind(read_embeddings(&bad_magic, "m").unwrap_err()),
            FormatError::BadMagic { .. }
        ));

        let mut bad_version = good.clone();
        bad_version[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            kind(read_embeddings(&bad_version, "m").unwrap_err()),
            FormatError::BadVersion { found: 2 }
        ));

        let mut nan_payload = good.clone();
        let tail = nan_payload.len() - 4;
        nan_payload[tail..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            kind(read_embeddings(&nan_payload, "m").unwrap_err()),
            FormatError::NonFinite { index: 5 }
        ));
    }

    #[test]
    fn writer_rejects_non_finite_values() {
        let m = matrix(2, 2, |i| if i == 3 { f32::INFINITY } else { 0.0 });
        assert!(matches!(
            kind(write_embeddings(&m).unwrap_err()),
            FormatError::NonFinite { index: 3 }
        ));
    }
}
