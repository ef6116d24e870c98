//! Binary snapshot files and report writers. Every write goes to a
//! temporary sibling first and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{MfpodError, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"MFPS";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const SNAPSHOT_HEADER_LEN: usize = 24;

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| {
            MfpodError::InvalidParameter(format!("{} is not a file path", path.display()))
        })?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Encodes `matrix` in the MFP1 layout.
pub fn encode_snapshots(matrix: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(SNAPSHOT_HEADER_LEN + 8 * matrix.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.ncols() as u64).to_le_bytes());
    for x in matrix.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Decodes an MFP1 buffer; `path` only labels errors.
pub fn decode_snapshots(bytes: &[u8], path: &Path) -> Result<DMatrix<f64>> {
    let corrupt = |reason: String| MfpodError::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < SNAPSHOT_HEADER_LEN {
        return Err(corrupt(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let m = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = n
        .checked_mul(m)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(SNAPSHOT_HEADER_LEN as u64));
    if expected != Some(bytes.len() as u64) {
        return Err(corrupt(format!(
            "header declares {n}x{m} but file holds {} bytes",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[SNAPSHOT_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_vec(n as usize, m as usize, data))
}

pub fn write_snapshots(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, &encode_snapshots(matrix))
}

pub fn read_snapshots(path: &Path) -> Result<DMatrix<f64>> {
    decode_snapshots(&fs::read(path)?, path)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| MfpodError::Serialization(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Writes a CSV table; rows shorter than the header are padded with empty cells.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(false)
        .from_writer(Vec::new());
    let ser = |e: csv::Error| MfpodError::Serialization(e.to_string());
    w.write_record(header).map_err(ser)?;
    for row in rows {
        let mut padded = row.clone();
        padded.resize(header.len().max(row.len()), String::new());
        w.write_record(&padded).map_err(ser)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| MfpodError::Serialization(e.to_string()))?;
    write_atomic(path, &bytes)
}
