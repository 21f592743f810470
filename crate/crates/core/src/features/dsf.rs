//! DSF1 binary feature files and the headerless CSV fallback.
//!
//! Layout: `44 53 46 31` magic, u32 LE row count, u32 LE column count,
//! u8 normalized flag, three zero bytes, then N*D little-endian f32 values
//! in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::FeatureMatrix;
use crate::{Error, Result};

pub const DSF_MAGIC: [u8; 4] = *b"DSF1";
const HEADER_LEN: usize = 16;

/// Load a DSF1 file, or a headerless CSV when the magic bytes are absent.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&DSF_MAGIC) {
        parse_dsf(&bytes)
    } else {
        parse_csv(&bytes)
    }
}

pub fn read_features<R: Read>(mut reader: R) -> Result<FeatureMatrix> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<reader>", e))?;
    if bytes.starts_with(&DSF_MAGIC) {
        parse_dsf(&bytes)
    } else {
        parse_csv(&bytes)
    }
}

pub fn save_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m.values().len());
    write_features(m, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_features<W: Write>(m: &FeatureMatrix, mut w: W) -> std::io::Result<()> {
    let n = u32::try_from(m.n_rows()).map_err(|_| too_big("row count"))?;
    let d = u32::try_from(m.n_cols()).map_err(|_| too_big("column count"))?;
    w.write_all(&DSF_MAGIC)?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&d.to_le_bytes())?;
    w.write_all(&[m.is_normalized() as u8, 0, 0, 0])?;
    let mut payload = Vec::with_capacity(4 * m.values().len());
    for &v in m.values() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&payload)
}

fn too_big(what: &str) -> std::io::Error {
    std::io::Error::new(
        std::io::ErrorKind::InvalidInput,
        format!("{what} does not fit in u32"),
    )
}

fn parse_dsf(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "DSF1 header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let flag = bytes[12];
    if flag > 1 {
        return Err(Error::Format(format!("normalized flag must be 0 or 1, got {flag}")));
    }
    if bytes[13..16] != [0, 0, 0] {
        return Err(Error::Format("reserved header bytes must be zero".into()));
    }
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("header declares empty matrix {n}x{d}")));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: payload.len(),
            context: format!("DSF1 payload bytes for {n}x{d} matrix"),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let m = FeatureMatrix::new(n, d, values)?;
    if flag == 1 && !m.is_normalized() {
        return Err(Error::Format(
            "header claims unit rows but at least one row is not unit norm".into(),
        ));
    }
    Ok(m)
}

fn parse_csv(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut values = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        match n_cols {
            None => n_cols = Some(rec.len()),
            Some(d) if d != rec.len() => {
                return Err(Error::LengthMismatch {
                    expected: d,
                    found: rec.len(),
                    context: format!("CSV feature row {row}"),
                })
            }
            _ => {}
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Format(format!("row {row}, column {col}: `{field}` is not a number"))
            })?;
            values.push(v);
        }
        n_rows += 1;
    }
    let n_cols = n_cols.ok_or_else(|| Error::Format("empty feature file".into()))?;
    FeatureMatrix::new(n_rows, n_cols, values)
}
