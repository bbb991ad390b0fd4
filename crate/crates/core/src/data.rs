//! Experimental and observational rows, the unpaired-arm conversion, and
//! CSV ingestion/emission.
//!
//! Experimental files have header `d,x1,...,xp`; observational files have
//! header `y,z,x1,...,xp`. All fields are numeric with `.` as the decimal
//! separator. Rows with missing or non-finite fields are rejected.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One experimental row: a noisy measurement `d` of the treatment effect
/// at covariates `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentalSample {
    pub d: f64,
    pub x: Vec<f64>,
}

/// One observational row: outcome `y` under treatment indicator `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationalSample {
    pub y: f64,
    pub z: bool,
    pub x: Vec<f64>,
}

impl ExperimentalSample {
    pub fn new(d: f64, x: Vec<f64>) -> Self {
        Self { d, x }
    }
}

impl ObservationalSample {
    pub fn new(y: f64, z: bool, x: Vec<f64>) -> Self {
        Self { y, z, x }
    }
}

/// Converts an unpaired experimental arm observation into an unbiased
/// effect measurement, `z*y/e - (1-z)*y/(1-e)`, where `e` is the
/// experiment's treatment probability at the row's covariates.
pub fn convert_unpaired(y: f64, z: bool, e: f64) -> Result<f64> {
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::invalid(format!(
            "treatment probability must lie in (0,1), got {e}"
        )));
    }
    Ok(if z { y / e } else { -y / (1.0 - e) })
}

/// Checks that both datasets are nonempty, internally consistent and share
/// the covariate dimension. Returns that dimension.
pub fn check_dimensions(exp: &[ExperimentalSample], obs: &[ObservationalSample]) -> Result<usize> {
    let p = exp
        .first()
        .map(|r| r.x.len())
        .or_else(|| obs.first().map(|r| r.x.len()))
        .ok_or_else(|| Error::invalid("both datasets are empty"))?;
    if p == 0 {
        return Err(Error::invalid("covariate dimension must be at least 1"));
    }
    for (i, r) in exp.iter().enumerate() {
        if r.x.len() != p {
            return Err(Error::DimensionMismatch {
                context: format!("experimental row {}", i + 1),
                expected: p,
                found: r.x.len(),
            });
        }
    }
    for (i, r) in obs.iter().enumerate() {
        if r.x.len() != p {
            return Err(Error::DimensionMismatch {
                context: format!("observational row {}", i + 1),
                expected: p,
                found: r.x.len(),
            });
        }
    }
    Ok(p)
}

fn parse_field(source: &str, row: usize, column: &str, raw: &str) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::Parse {
            source_name: source.to_string(),
            row,
            column: column.to_string(),
            message: "missing value".into(),
        });
    }
    let v: f64 = trimmed.parse().map_err(|_| Error::Parse {
        source_name: source.to_string(),
        row,
        column: column.to_string(),
        message: format!("not a number: {trimmed:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            source_name: source.to_string(),
            row,
            column: column.to_string(),
            message: "non-finite value".into(),
        });
    }
    Ok(v)
}

fn csv_error(source: &str, row: usize, e: csv::Error) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        row,
        column: "-".into(),
        message: e.to_string(),
    }
}

fn read_table<R: Read>(
    reader: R,
    source: &str,
    leading: &[&str],
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(source, 0, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < leading.len() + 1 {
        return Err(Error::Parse {
            source_name: source.to_string(),
            row: 0,
            column: "header".into(),
            message: format!(
                "expected columns {} followed by at least one covariate",
                leading.join(",")
            ),
        });
    }
    for (i, want) in leading.iter().enumerate() {
        if !header[i].eq_ignore_ascii_case(want) {
            return Err(Error::Parse {
                source_name: source.to_string(),
                row: 0,
                column: header[i].clone(),
                message: format!("column {} must be named {want:?}", i + 1),
            });
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_error(source, row, e))?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                source_name: source.to_string(),
                row,
                column: "-".into(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let vals = rec
            .iter()
            .zip(&header)
            .map(|(raw, col)| parse_field(source, row, col, raw))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    Ok((header, rows))
}

pub fn read_experimental<R: Read>(reader: R, source: &str) -> Result<Vec<ExperimentalSample>> {
    let (_, rows) = read_table(reader, source, &["d"])?;
    Ok(rows
        .into_iter()
        .map(|r| ExperimentalSample::new(r[0], r[1..].to_vec()))
        .collect())
}

pub fn read_observational<R: Read>(reader: R, source: &str) -> Result<Vec<ObservationalSample>> {
    let (header, rows) = read_table(reader, source, &["y", "z"])?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let z = match r[1] {
                0.0 => false,
                1.0 => true,
                v => {
                    return Err(Error::Parse {
                        source_name: source.to_string(),
                        row: i + 1,
                        column: header[1].clone(),
                        message: format!("treatment indicator must be 0 or 1, got {v}"),
                    })
                }
            };
            Ok(ObservationalSample::new(r[0], z, r[2..].to_vec()))
        })
        .collect()
}

pub fn read_experimental_file(path: &Path) -> Result<Vec<ExperimentalSample>> {
    let f = std::fs::File::open(path)?;
    read_experimental(f, &path.display().to_string())
}

pub fn read_observational_file(path: &Path) -> Result<Vec<ObservationalSample>> {
    let f = std::fs::File::open(path)?;
    read_observational(f, &path.display().to_string())
}

fn covariate_header(p: usize) -> impl Iterator<Item = String> {
    (1..=p).map(|j| format!("x{j}"))
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_experimental<W: Write>(writer: W, rows: &[ExperimentalSample]) -> Result<()> {
    let p = rows.first().map_or(1, |r| r.x.len());
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = std::iter::once("d".to_string())
        .chain(covariate_header(p))
        .collect();
    w.write_record(&header).map_err(io_err)?;
    for r in rows {
        let rec: Vec<String> = std::iter::once(r.d)
            .chain(r.x.iter().copied())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_observational<W: Write>(writer: W, rows: &[ObservationalSample]) -> Result<()> {
    let p = rows.first().map_or(1, |r| r.x.len());
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = ["y".to_string(), "z".to_string()]
        .into_iter()
        .chain(covariate_header(p))
        .collect();
    w.write_record(&header).map_err(io_err)?;
    for r in rows {
        let rec: Vec<String> = [r.y, if r.z { 1.0 } else { 0.0 }]
            .into_iter()
            .chain(r.x.iter().copied())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}
