//! Dataset files.
//!
//! Dense CSV: a header row, then one sample per line with the label (0 or 1)
//! in the last column. Sparse text: one sample per line as
//! `label idx:val idx:val ...` with 0-based, strictly ascending indices.
//! Sample ids follow row order.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use hardsplit_core::{Error, FeatureMatrix, Result};

fn parse_error(path: &Path, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{}:{line}: {msg}", path.display()))
}

fn parse_label(path: &Path, line: u64, field: &str) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(parse_error(path, line, format!("label {other:?} is not 0 or 1"))),
    }
}

pub fn load_dense_csv(path: &Path) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let width = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e))?
        .len()
        .checked_sub(1)
        .filter(|&w| w > 0)
        .ok_or_else(|| parse_error(path, 1, "header needs at least one feature column and a label column"))?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width + 1 {
            return Err(parse_error(path, line, format!("expected {} fields, found {}", width + 1, record.len())));
        }
        for (j, field) in record.iter().take(width).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(path, line, format!("column {j}: {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, format!("column {j}: non-finite value")));
            }
            values.push(v);
        }
        labels.push(parse_label(path, line, &record[width])?);
    }
    FeatureMatrix::new(width, values, labels)
}

/// Reads a sparse file. The width is the larger of `n_features` and the
/// highest index seen plus one.
pub fn load_sparse(path: &Path, n_features: Option<usize>) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = n_features.unwrap_or(0);
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let lineno = k as u64 + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        labels.push(parse_label(path, lineno, fields.next().unwrap_or_default())?);
        let mut row = Vec::new();
        let mut last: Option<usize> = None;
        for entry in fields {
            let (idx, val) = entry
                .split_once(':')
                .ok_or_else(|| parse_error(path, lineno, format!("entry {entry:?} is not idx:val")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("index {idx:?} is not a non-negative integer")))?;
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_error(path, lineno, format!("value {val:?} is not a finite number")))?;
            if last.is_some_and(|l| idx <= l) {
                return Err(parse_error(path, lineno, format!("index {idx} is not ascending")));
            }
            if n_features.is_some_and(|n| idx >= n) {
                return Err(parse_error(path, lineno, format!("index {idx} exceeds declared width")));
            }
            last = Some(idx);
            width = width.max(idx + 1);
            row.push((idx, val));
        }
        rows.push(row);
    }
    let mut values = vec![0.0; rows.len() * width];
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            values[i * width + j] = v;
        }
    }
    FeatureMatrix::new(width, values, labels)
}

pub fn write_dense_csv(path: &Path, data: &FeatureMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::InvalidInput(format!("{}: {e}", path.display()));
    let mut header: Vec<String> = (0..data.n_features()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(io)?;
    for (row, y) in data.rows().zip(data.labels()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
