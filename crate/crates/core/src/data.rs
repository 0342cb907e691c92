//! Column-oriented numeric datasets and their CSV form.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("column `{column}` row {row}: cannot parse `{value}` as a number")]
    Parse { column: String, row: usize, value: String },
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("column `{column}` has {found} rows, expected {expected}")]
    RaggedColumn { column: String, expected: usize, found: usize },
    #[error("dataset has no rows")]
    Empty,
}

/// Named numeric columns of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    columns: BTreeMap<String, Vec<f64>>,
    order: Vec<String>,
    n: usize,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds (or replaces) a column. The first column fixes the row count.
    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Result<Self, DataError> {
        self.insert(name, values)?;
        Ok(self)
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) -> Result<(), DataError> {
        if self.order.is_empty() {
            self.n = values.len();
        } else if values.len() != self.n {
            return Err(DataError::RaggedColumn { column: name.to_string(), expected: self.n, found: values.len() });
        }
        if self.columns.insert(name.to_string(), values).is_none() {
            self.order.push(name.to_string());
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn column_names(&self) -> &[String] {
        &self.order
    }

    pub fn column(&self, name: &str) -> Result<&[f64], DataError> {
        self.columns.get(name).map(Vec::as_slice).ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| DataError::Parse {
                    column: headers[j].clone(),
                    row: row + 1,
                    value: field.to_string(),
                })?;
                cols[j].push(v);
            }
        }
        let mut ds = Dataset::new();
        for (name, values) in headers.iter().zip(cols) {
            ds.insert(name, values)?;
        }
        if ds.n == 0 {
            return Err(DataError::Empty);
        }
        Ok(ds)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self, DataError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes all columns in insertion order. Values use Rust's shortest
    /// round-trip formatting, so a write/read cycle is lossless.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.order)?;
        for i in 0..self.n {
            wtr.write_record(self.order.iter().map(|c| format!("{}", self.columns[c][i])))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::new()
            .with_column("y", vec![1.0, 0.0, 1.0])
            .unwrap()
            .with_column("x1", vec![0.1, 2.5e-7, -3.25])
            .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,x1\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn parse_errors_name_the_column() {
        let err = Dataset::read_csv("y,x\n1,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::Parse { ref column, row: 1, .. } if column == "x"));
        assert!(matches!(Dataset::read_csv("y,x\n".as_bytes()), Err(DataError::Empty)));
    }

    #[test]
    fn ragged_insert_rejected() {
        let ds = Dataset::new().with_column("a", vec![1.0, 2.0]).unwrap();
        assert!(matches!(ds.with_column("b", vec![1.0]), Err(DataError::RaggedColumn { .. })));
    }
}
