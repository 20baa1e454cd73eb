//! Trained-model container and per-epoch record CSV.
//!
//! Model layout mirrors the embedding container (little-endian): magic
//! `PGMA`, version u32 = 1, hidden u32, dim u32, then the parameter blocks
//! in declared order (`v`, `u`, `w`, `c`, `b`) as f64.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::embed::format::FormatError;
use crate::error::{Error, Result};

use super::{EpochRecord, GmaParams};

pub const MODEL_MAGIC: [u8; 4] = *b"PGMA";
pub const MODEL_VERSION: u32 = 1;

fn model_len(hidden: u64, dim: u64) -> u64 {
    16 + (2 * hidden * dim + hidden + dim + 1) * 8
}

pub fn write_gma(params: &GmaParams) -> Result<Vec<u8>> {
    params.validate()?;
    let mut out =
        Vec::with_capacity(model_len(params.hidden as u64, params.dim as u64) as usize);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.hidden as u32).to_le_bytes());
    out.extend_from_slice(&(params.dim as u32).to_le_bytes());
    for &x in params.v.iter().chain(&params.u).chain(&params.w).chain(&params.c) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&params.b.to_le_bytes());
    Ok(out)
}

pub fn save_gma(params: &GmaParams, path: &Path) -> Result<()> {
    fs::write(path, write_gma(params)?).map_err(|e| Error::io(path, e))
}

pub fn read_gma(bytes: &[u8]) -> Result<GmaParams> {
    if bytes.len() < 16 {
        return Err(FormatError::LengthMismatch { expected: 16, actual: bytes.len() as u64 }.into());
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MODEL_MAGIC {
        return Err(FormatError::BadMagic { found: magic }.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(FormatError::BadVersion { found: version }.into());
    }
    let hidden = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = model_len(hidden as u64, dim as u64);
    if bytes.len() as u64 != expected {
        return Err(FormatError::LengthMismatch { expected, actual: bytes.len() as u64 }.into());
    }

    let mut offset = 16usize;
    let mut take = |count: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap()));
            offset += 8;
        }
        out
    };
    let v = take(hidden * dim);
    let u = take(hidden * dim);
    let w = take(hidden);
    let c = take(dim);
    let b = take(1)[0];
    let params = GmaParams { hidden, dim, v, u, w, c, b };
    params.validate()?;
    Ok(params)
}

pub fn load_gma(path: &Path) -> Result<GmaParams> {
    read_gma(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// `epoch,train_loss,val_loss,val_auc` rows with a header.
pub fn records_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_auc\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_auc);
    }
    out
}

pub fn write_records(records: &[EpochRecord], path: &Path) -> Result<()> {
    fs::write(path, records_csv(records)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trips_bit_exact() {
        let params = GmaParams::init(5, 7, 13);
        let bytes = write_gma(&params).unwrap();
        assert_eq!(bytes.len() as u64, model_len(5, 7));
        assert_eq!(read_gma(&bytes).unwrap(), params);
    }

    #[test]
    fn model_corruption_is_detected() {
        let params = GmaParams::init(2, 3, 1);
        let good = write_gma(&params).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[1] = b'X';
        assert!(matches!(
            read_gma(&bad_magic),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));

        let mut short = good.clone();
        short.truncate(good.len() - 1);
        assert!(matches!(
            read_gma(&short),
            Err(Error::Format(FormatError::LengthMismatch { .. }))
        ));
    }

    #[test]
    fn records_csv_shape() {
        let records = vec![
            EpochRecord { epoch: 0, train_loss: 0.7, val_loss: 0.69, val_auc: 0.5 },
            EpochRecord { epoch: 1, train_loss: 0.5, val_loss: 0.55, val_auc: 0.75 },
        ];
        let csv = records_csv(&records);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "epoch,train_loss,val_loss,val_auc");
        assert_eq!(lines[2], "1,0.5,0.55,0.75");
    }
}
