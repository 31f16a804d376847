//! Matrix and label file formats.
//!
//! Binary layout (little-endian): `b"COVR"`, version byte `0x01`, `u32` N,
//! `u32` K, then N·K `f64` values row-major.
//!
//! CSV layout: header `c0,...,c{K-1}`, one sample per line.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CovarError, Result};
use crate::stats::ProbabilityBatch;

pub const MAGIC: &[u8; 4] = b"COVR";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.bin` and `.covr` are binary, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("bin") || ext.eq_ignore_ascii_case("covr") => {
                MatrixFormat::Binary
            }
            _ => MatrixFormat::Csv,
        }
    }
}

fn validation_to_parse(err: CovarError) -> CovarError {
    match err {
        CovarError::Validation { row, reason } => CovarError::parse(format!("row {row}"), reason),
        other => other,
    }
}

pub fn encode_binary(batch: &ProbabilityBatch) -> Result<Vec<u8>> {
    let n = u32::try_from(batch.n_samples())
        .map_err(|_| CovarError::domain("too many samples for the binary format"))?;
    let k = u32::try_from(batch.n_classes())
        .map_err(|_| CovarError::domain("too many classes for the binary format"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + batch.values().len() * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    for v in batch.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_binary(bytes: &[u8]) -> Result<ProbabilityBatch> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(CovarError::parse("offset 0", "bad magic, expected \"COVR\""));
    }
    match bytes.get(4) {
        Some(&VERSION) => {}
        Some(v) => {
            return Err(CovarError::parse("offset 4", format!("unsupported version {v:#04x}")));
        }
        None => return Err(CovarError::parse("offset 4", "truncated header")),
    }
    if bytes.len() < HEADER_LEN {
        return Err(CovarError::parse(
            format!("offset {}", bytes.len()),
            "truncated header",
        ));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let (n, k) = (word(5) as usize, word(9) as usize);
    let payload = n
        .checked_mul(k)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| CovarError::parse("offset 5", "declared shape overflows"))?;
    let actual = bytes.len() - HEADER_LEN;
    if actual != payload {
        let what = if actual < payload { "truncated payload" } else { "trailing bytes" };
        return Err(CovarError::parse(
            format!("offset {}", HEADER_LEN + actual.min(payload)),
            format!("{what}: {n}x{k} needs {payload} bytes, found {actual}"),
        ));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ProbabilityBatch::new(k, values).map_err(validation_to_parse)
}

/// Values use the shortest representation that parses back to the same bits.
pub fn write_csv<W: Write>(batch: &ProbabilityBatch, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = (0..batch.n_classes()).map(|c| format!("c{c}")).collect();
    w.write_record(&header).map_err(csv_error)?;
    for row in batch.rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<ProbabilityBatch> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers().map_err(csv_error)?.clone();
    let k = header.len();
    for (i, name) in header.iter().enumerate() {
        if name != format!("c{i}") {
            return Err(CovarError::parse(
                "line 1",
                format!("expected header column c{i}, found {name:?}"),
            ));
        }
    }
    let mut values = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        if record.len() != k {
            return Err(CovarError::parse(
                format!("line {line}"),
                format!("{} fields, expected {k}", record.len()),
            ));
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                CovarError::parse(format!("line {line}"), format!("not a number: {field:?}"))
            })?;
            values.push(v);
        }
    }
    ProbabilityBatch::new(k, values).map_err(validation_to_parse)
}

fn csv_error(e: csv::Error) -> CovarError {
    let location = e
        .position()
        .map_or_else(|| "csv".to_string(), |p| format!("line {}", p.line()));
    CovarError::parse(location, e.to_string())
}

pub fn decode_matrix(bytes: &[u8], format: MatrixFormat) -> Result<ProbabilityBatch> {
    match format {
        MatrixFormat::Binary => decode_binary(bytes),
        MatrixFormat::Csv => read_csv(bytes),
    }
}

pub fn encode_matrix(batch: &ProbabilityBatch, format: MatrixFormat) -> Result<Vec<u8>> {
    match format {
        MatrixFormat::Binary => encode_binary(batch),
        MatrixFormat::Csv => {
            let mut out = Vec::new();
            write_csv(batch, &mut out)?;
            Ok(out)
        }
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<ProbabilityBatch> {
    decode_matrix(&fs::read(path)?, format)
}

pub fn save_matrix(path: &Path, batch: &ProbabilityBatch, format: MatrixFormat) -> Result<()> {
    fs::write(path, encode_matrix(batch, format)?)?;
    Ok(())
}

/// One non-negative integer per line; an optional `label` header is skipped.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == "label") {
            continue;
        }
        let y = line
            .parse()
            .map_err(|_| CovarError::parse(format!("line {}", i + 1), format!("bad label {line:?}")))?;
        labels.push(y);
    }
    Ok(labels)
}

pub fn format_labels(labels: &[usize]) -> String {
    let mut out = String::from("label\n");
    for y in labels {
        out.push_str(&y.to_string());
        out.push('\n');
    }
    out
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&fs::read_to_string(path)?)
}
