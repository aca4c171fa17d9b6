//! CSV ingestion and emission for datasets.
//!
//! Input is UTF-8 with a header row and numeric cells. Blank lines inside the
//! body are rejected; trailing blank lines at the end of the file are not.

use std::fs;
use std::io::Write;
use std::path::Path;

use crpd_core::Dataset;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IoError {
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("file is empty")]
    EmptyFile,
    #[error("header has no data rows")]
    NoRows,
    #[error("line {line}: blank line inside the data")]
    BlankLine { line: u64 },
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("line {line}, column {column:?}: cannot parse {cell:?} as a number")]
    NonNumericCell {
        line: u64,
        column: String,
        cell: String,
    },
    #[error("line {line}, column {column:?}: value is not finite")]
    NonFinite { line: u64, column: String },
    #[error("{0}")]
    Dataset(String),
    #[error("cannot write output: {0}")]
    Write(String),
}

pub fn parse_csv(path: &Path) -> Result<Dataset, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::Read {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let text = String::from_utf8(bytes).map_err(|e| IoError::Read {
        path: path.display().to_string(),
        reason: format!("not valid UTF-8 ({e})"),
    })?;
    parse_csv_str(&text)
}

pub fn parse_csv_str(text: &str) -> Result<Dataset, IoError> {
    if text.trim().is_empty() {
        return Err(IoError::EmptyFile);
    }
    check_blank_lines(text)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.iter().any(String::is_empty) {
        return Err(IoError::Parse {
            line: 1,
            reason: "empty column name in header".into(),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(record.len());
        for (cell, column) in record.iter().zip(&header) {
            let v: f64 = cell.parse().map_err(|_| IoError::NonNumericCell {
                line,
                column: column.clone(),
                cell: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(IoError::NonFinite {
                    line,
                    column: column.clone(),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::NoRows);
    }
    Dataset::from_rows(header, rows).map_err(|e| IoError::Dataset(e.to_string()))
}

// The csv reader skips empty lines silently, so they are found up front.
fn check_blank_lines(text: &str) -> Result<(), IoError> {
    let lines: Vec<&str> = text.lines().collect();
    let last_content = lines.iter().rposition(|l| !l.trim().is_empty());
    if let Some(last) = last_content {
        if let Some(i) = lines[..last].iter().position(|l| l.trim().is_empty()) {
            return Err(IoError::BlankLine { line: i as u64 + 1 });
        }
    }
    Ok(())
}

fn csv_error(e: csv::Error, fallback_line: u64) -> IoError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    let reason = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        _ => e.to_string(),
    };
    IoError::Parse { line, reason }
}

/// Writes the dataset with shortest round-trip float formatting, so
/// `parse_csv_str(write_csv(d))` reproduces `d` exactly.
pub fn write_csv<W: Write>(dataset: &Dataset, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    let werr = |e: csv::Error| IoError::Write(e.to_string());
    w.write_record(dataset.column_names()).map_err(werr)?;
    for row in dataset.rows() {
        w.write_record(row.iter().map(|v| format_float(*v)))
            .map_err(werr)?;
    }
    w.flush().map_err(|e| IoError::Write(e.to_string()))
}

/// Shortest representation that parses back to the same bits; switches to
/// exponent notation for very large or small magnitudes.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub fn format_opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_a_single_column() {
        let d = parse_csv_str("x\n1\n2\n3\n").unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.column("x").unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn blank_line_in_body_is_named() {
        assert_eq!(
            parse_csv_str("x\n1\n\n3\n"),
            Err(IoError::BlankLine { line: 3 })
        );
        assert!(parse_csv_str("x\n1\n2\n\n\n").is_ok());
    }

    #[test]
    fn bad_cells_report_line_and_column() {
        let e = parse_csv_str("a,b\n1,2\n3,oops\n").unwrap_err();
        assert_eq!(
            e,
            IoError::NonNumericCell {
                line: 3,
                column: "b".into(),
                cell: "oops".into()
            }
        );
        let e = parse_csv_str("a,b\n1,2\n3\n").unwrap_err();
        assert!(matches!(e, IoError::Parse { line: 3, .. }), "{e:?}");
        let e = parse_csv_str("a\n1\nNaN\n").unwrap_err();
        assert!(matches!(e, IoError::NonFinite { line: 3, .. }));
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(parse_csv_str(""), Err(IoError::EmptyFile));
        assert_eq!(parse_csv_str("x\n"), Err(IoError::NoRows));
        assert!(matches!(
            parse_csv_str("x,x\n1,2\n"),
            Err(IoError::Dataset(_))
        ));
    }
}
