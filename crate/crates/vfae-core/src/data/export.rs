//! Embedding export/import (CSV plus a provenance sidecar) and raw numeric
//! matrix loading for the two-sample CLI.

use std::path::{Path, PathBuf};

use super::DataError;
use crate::eval::{EmbeddingSet, Provenance};
use crate::tensor::Tensor;

/// Path of the provenance sidecar written next to an embedding CSV.
pub fn provenance_path(csv_path: &Path) -> PathBuf {
    let mut os = csv_path.as_os_str().to_owned();
    os.push(".provenance.toml");
    PathBuf::from(os)
}

/// Write embeddings as CSV (`z_0..z_{d−1}, s, y`; y blank if absent) with a
/// TOML sidecar recording where they came from. Floats use shortest
/// round-trip formatting, so re-import is exact.
pub fn export_embeddings(e: &EmbeddingSet, path: &Path) -> Result<(), DataError> {
    let d = e.z.cols();
    let mut out = String::new();
    let mut header: Vec<String> = (0..d).map(|i| format!("z_{i}")).collect();
    header.push("s".into());
    header.push("y".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..e.z.rows() {
        let mut fields: Vec<String> = e.z.row(r).iter().map(|v| format!("{v}")).collect();
        fields.push(e.s[r].to_string());
        fields.push(match &e.y {
            Some(y) => y[r].to_string(),
            None => String::new(),
        });
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    let sidecar = toml::to_string_pretty(&e.provenance)
        .map_err(|err| DataError::Export(format!("provenance serialization: {err}")))?;
    std::fs::write(provenance_path(path), sidecar)?;
    Ok(())
}

/// Read an embedding CSV written by [`export_embeddings`], including its
/// provenance sidecar.
pub fn import_embeddings(path: &Path) -> Result<EmbeddingSet, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with("z_")).count();
    if d == 0 || headers.len() != d + 2 {
        return Err(DataError::Export(format!(
            "{} does not look like an embedding export",
            path.display()
        )));
    }
    let mut z = Vec::new();
    let mut s = Vec::new();
    let mut y: Vec<Option<usize>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        for j in 0..d {
            let cell = &record[j];
            z.push(cell.parse::<f64>().map_err(|_| DataError::Parse {
                line: i + 2,
                detail: format!("bad embedding value {cell:?}"),
            })?);
        }
        s.push(record[d].parse::<usize>().map_err(|_| DataError::Parse {
            line: i + 2,
            detail: format!("bad s value {:?}", &record[d]),
        })?);
        let ycell = record[d + 1].trim();
        y.push(if ycell.is_empty() {
            None
        } else {
            Some(ycell.parse::<usize>().map_err(|_| DataError::Parse {
                line: i + 2,
                detail: format!("bad y value {ycell:?}"),
            })?)
        });
    }
    let rows = s.len();
    let provenance_src = std::fs::read_to_string(provenance_path(path))?;
    let provenance: Provenance = toml::from_str(&provenance_src)
        .map_err(|e| DataError::Export(format!("provenance parse: {e}")))?;
    let y = if y.iter().all(|v| v.is_some()) {
        Some(y.into_iter().map(|v| v.unwrap()).collect())
    } else if y.iter().all(|v| v.is_none()) {
        None
    } else {
        return Err(DataError::Export("mixed labeled/blank y column on import".into()));
    };
    Ok(EmbeddingSet { z: Tensor::matrix(rows, d, z), s, y, provenance })
}

/// Load a plain numeric CSV matrix. A header row is detected by attempting
/// to parse the first record as numbers.
pub fn read_matrix_csv(path: &Path) -> Result<Tensor, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: Result<Vec<f64>, _> =
            record.iter().map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue, // header row
            Err(e) => {
                return Err(DataError::Parse {
                    line: i + 1,
                    detail: format!("non-numeric cell: {e}"),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(DataError::Export(format!("{}: no numeric rows", path.display())));
    }
    let cols = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(DataError::Parse {
            line: bad + 1,
            detail: format!("expected {cols} columns, got {}", rows[bad].len()),
        });
    }
    let n = rows.len();
    Ok(Tensor::matrix(n, cols, rows.into_iter().flatten().collect()))
}
