//! CSV and fbin readers/writers.
//!
//! fbin layout: 8 magic bytes, little-endian `u32` rows, `u32` cols, then
//! `rows * cols` little-endian `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{DatasetStore, Metric};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const FBIN_MAGIC: &[u8; 8] = b"FUNSNE01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Fbin,
}

impl Format {
    /// Guesses from the extension; anything that is not `.fbin` is read as CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("fbin") => Format::Fbin,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "fbin" => Ok(Format::Fbin),
            other => Err(Error::Invalid(format!("unknown format {other:?}"))),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format, metric: Metric) -> Result<DatasetStore> {
    let m = load_matrix(path, format)?;
    DatasetStore::from_matrix(&m, metric).map_err(|e| match e {
        // report load-time rows 1-based like the parsers do
        Error::NonFinite { row, col } => Error::NonFinite { row: row + 1, col },
        Error::ZeroVector { row } => Error::ZeroVector { row: row + 1 },
        e => e,
    })
}

pub fn load_matrix(path: impl AsRef<Path>, format: Format) -> Result<Matrix> {
    match format {
        Format::Csv => read_csv(path.as_ref()),
        Format::Fbin => read_fbin(path.as_ref()),
    }
}

fn read_csv(path: &Path) -> Result<Matrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let expected = *cols.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                row,
                expected,
                found: record.len(),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                message: format!("cannot parse {field:?} in column {}", c + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col: c + 1 });
            }
            data.push(v);
        }
        rows += 1;
    }
    Ok(Matrix::from_vec(rows, cols.unwrap_or(0), data))
}

pub fn read_fbin(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = [0u8; 16];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::BadFormat("truncated header".into()))?;
    if &header[..8] != FBIN_MAGIC {
        return Err(Error::BadFormat("bad magic".into()));
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != rows * cols * 4 {
        return Err(Error::BadFormat(format!(
            "expected {} payload bytes for {rows}x{cols}, found {}",
            rows * cols * 4,
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: k / cols + 1,
                col: k % cols + 1,
            });
        }
        data.push(v as f64);
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

/// Writes `matrix` as fbin. Values are narrowed to `f32`.
pub fn save_matrix(matrix: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(FBIN_MAGIC)?;
        w.write_all(&(matrix.rows() as u32).to_le_bytes())?;
        w.write_all(&(matrix.cols() as u32).to_le_bytes())?;
        for &v in matrix.as_slice() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn write_csv(matrix: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(e.to_string()))?;
    for row in matrix.iter_rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
