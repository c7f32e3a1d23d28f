//! Matrix files.
//!
//! * CSV: one matrix row per line, comma separated, values printed in the
//!   shortest form that parses back to the same `f64`.
//! * Binary: `rows: u64 LE`, `cols: u64 LE`, then `rows·cols` row-major
//!   `f64 LE` values.

use std::io::{BufRead, Read, Write};

use super::Matrix;
use crate::error::{Error, Result};

pub fn write_csv(m: &Matrix, mut w: impl Write) -> Result<()> {
    for r in 0..m.rows() {
        let line = m
            .row(r)
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_csv(r: impl BufRead) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("line {}: {f:?}: {e}", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::Format(format!(
                    "line {}: expected {c} values, found {}",
                    lineno + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

pub fn write_binary(m: &Matrix, mut w: impl Write) -> Result<()> {
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary(mut r: impl Read) -> Result<Matrix> {
    let mut word = [0u8; 8];
    let mut dim = |r: &mut dyn Read| -> Result<usize> {
        r.read_exact(&mut word)
            .map_err(|_| Error::Format("truncated header".into()))?;
        usize::try_from(u64::from_le_bytes(word))
            .map_err(|_| Error::Format("dimension overflows usize".into()))
    };
    let rows = dim(&mut r)?;
    let cols = dim(&mut r)?;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes for {rows}x{cols}, found {}",
            len * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Loads a matrix, choosing the format from the extension (`.csv` or binary).
pub fn load(path: &std::path::Path) -> Result<Matrix> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv(std::io::BufReader::new(file))
    } else {
        read_binary(std::io::BufReader::new(file))
    }
}

pub fn save(m: &Matrix, path: &std::path::Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        write_csv(m, file)
    } else {
        write_binary(m, file)
    }
}
