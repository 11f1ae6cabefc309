//! Tabular datasets: typed columns plus rows of JSON cell values.
//!
//! Cells keep the JSON value they were imported with (strings for date
//! columns), so a dataset extracted from a chart can be put back without
//! loss.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::chart::dates::parse_iso_datetime;

/// Share of non-null values that must parse as ISO dates for a string column
/// to be typed `date`.
pub const DATE_DETECTION_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomicType {
    Integer,
    Number,
    String,
    Boolean,
    Date,
}

impl AtomicType {
    pub fn as_str(self) -> &'static str {
        match self {
            AtomicType::Integer => "integer",
            AtomicType::Number => "number",
            AtomicType::String => "string",
            AtomicType::Boolean => "boolean",
            AtomicType::Date => "date",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, AtomicType::Integer | AtomicType::Number)
    }

    /// Whether `value` (non-null) is an acceptable cell for this type. Date
    /// columns are string-backed; a minority of unparseable strings is
    /// tolerated by the detection threshold.
    pub fn admits(self, value: &Value) -> bool {
        match (self, value) {
            (_, Value::Null) => true,
            (AtomicType::Integer, Value::Number(n)) => n.is_i64() || n.is_u64(),
            (AtomicType::Number, Value::Number(_)) => true,
            (AtomicType::String | AtomicType::Date, Value::String(_)) => true,
            (AtomicType::Boolean, Value::Bool(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub atomic_type: AtomicType,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataError {
    #[error("dataset is empty")]
    Empty,
    #[error("dataset has no columns")]
    NoColumns,
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("row {row}: expected {expected} values, found {found}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column:?}: value {value} is not {expected}")]
    CellType {
        row: usize,
        column: String,
        value: String,
        expected: &'static str,
    },
    #[error("CSV parse error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
}

/// Named columns of typed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    columns: Vec<Column>,
    rows: Vec<Vec<Value>>,
}

impl DataTable {
    /// Builds a table, checking row arity and cell types.
    pub fn new(columns: Vec<Column>, rows: Vec<Vec<Value>>) -> Result<Self, DataError> {
        if columns.is_empty() {
            return Err(DataError::NoColumns);
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::DuplicateColumn(c.name.clone()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(DataError::RowLength {
                    row: i,
                    expected: columns.len(),
                    found: row.len(),
                });
            }
            for (cell, col) in row.iter().zip(&columns) {
                if !col.atomic_type.admits(cell) {
                    return Err(DataError::CellType {
                        row: i,
                        column: col.name.clone(),
                        value: cell.to_string(),
                        expected: col.atomic_type.as_str(),
                    });
                }
            }
        }
        Ok(Self { columns, rows })
    }

    /// Builds a table from untyped cells, inferring each column's type.
    pub fn infer(names: Vec<String>, rows: Vec<Vec<Value>>) -> Result<Self, DataError> {
        if names.is_empty() {
            return Err(DataError::NoColumns);
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != names.len() {
                return Err(DataError::RowLength {
                    row: i,
                    expected: names.len(),
                    found: row.len(),
                });
            }
        }
        let mut rows = rows;
        let mut columns = Vec::with_capacity(names.len());
        for (j, name) in names.into_iter().enumerate() {
            let atomic_type = infer_type(rows.iter().map(|r| &r[j]));
            if atomic_type == AtomicType::String {
                for row in rows.iter_mut() {
                    stringify_cell(&mut row[j]);
                }
            } else if atomic_type == AtomicType::Number {
                for row in rows.iter_mut() {
                    if let Value::Number(n) = &row[j] {
                        if let Some(f) = n.as_f64() {
                            if !n.is_f64() {
                                row[j] = json_f64(f);
                            }
                        }
                    }
                }
            }
            columns.push(Column { name, atomic_type });
        }
        Self::new(columns, rows)
    }

    /// Parses CSV text with a mandatory header row. Empty cells become null;
    /// other cells are typed by column inference.
    pub fn from_csv(bytes: &[u8]) -> Result<Self, DataError> {
        let text = std::str::from_utf8(bytes).map_err(|e| DataError::Csv {
            line: 1,
            message: format!("payload is not UTF-8: {e}"),
        })?;
        if text.trim().is_empty() {
            return Err(DataError::Empty);
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()
            .map_err(csv_error)?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_error)?;
            rows.push(record.iter().map(parse_csv_cell).collect());
        }
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        Self::infer(headers, rows)
    }

    /// Parses a JSON array of records. Column order follows first appearance
    /// of each key; records lacking a key get null in that column.
    pub fn from_json_records(value: &Value) -> Result<Self, DataError> {
        Self::from_records_at(value, "")
    }

    pub(crate) fn from_records_at(value: &Value, path: &str) -> Result<Self, DataError> {
        let Value::Array(items) = value else {
            return Err(DataError::Json {
                path: if path.is_empty() { "/".into() } else { path.into() },
                message: "expected an array of records".into(),
            });
        };
        if items.is_empty() {
            return Err(DataError::Empty);
        }
        let mut names: Vec<String> = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let Value::Object(record) = item else {
                return Err(DataError::Json {
                    path: format!("{path}/{i}"),
                    message: "expected a record object".into(),
                });
            };
            for key in record.keys() {
                if !names.contains(key) {
                    names.push(key.clone());
                }
            }
        }
        let rows = items
            .iter()
            .map(|item| {
                let record = item.as_object().expect("checked above");
                names
                    .iter()
                    .map(|n| record.get(n).cloned().unwrap_or(Value::Null))
                    .collect()
            })
            .collect();
        Self::infer(names, rows)
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_values(&self, index: usize) -> impl Iterator<Item = &Value> {
        self.rows.iter().map(move |r| &r[index])
    }

    /// The table as an array of record objects, keys in column order.
    pub fn to_records(&self) -> Vec<Value> {
        self.rows
            .iter()
            .map(|row| {
                let mut m = Map::new();
                for (c, v) in self.columns.iter().zip(row) {
                    m.insert(c.name.clone(), v.clone());
                }
                Value::Object(m)
            })
            .collect()
    }
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        _ => e.to_string(),
    };
    DataError::Csv { line, message }
}

fn parse_csv_cell(raw: &str) -> Value {
    let t = raw.trim();
    if t.is_empty() {
        return Value::Null;
    }
    match t {
        "true" | "TRUE" | "True" => return Value::Bool(true),
        "false" | "FALSE" | "False" => return Value::Bool(false),
        _ => {}
    }
    if let Ok(i) = t.parse::<i64>() {
        return Value::from(i);
    }
    if looks_numeric(t) {
        if let Ok(f) = t.parse::<f64>() {
            if f.is_finite() {
                return json_f64(f);
            }
        }
    }
    Value::String(raw.to_string())
}

// Rejects "inf", "NaN" and similar words that f64::from_str accepts.
fn looks_numeric(t: &str) -> bool {
    t.bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
}

fn json_f64(f: f64) -> Value {
    serde_json::Number::from_f64(f)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn stringify_cell(cell: &mut Value) {
    if !matches!(cell, Value::Null | Value::String(_)) {
        let text = cell.to_string();
        *cell = Value::String(text);
    }
}

fn infer_type<'a>(values: impl Iterator<Item = &'a Value>) -> AtomicType {
    let (mut ints, mut floats, mut bools, mut strings, mut dates, mut other) = (0, 0, 0, 0, 0, 0);
    for v in values {
        match v {
            Value::Null => {}
            Value::Bool(_) => bools += 1,
            Value::Number(n) if n.is_i64() || n.is_u64() => ints += 1,
            Value::Number(_) => floats += 1,
            Value::String(s) => {
                strings += 1;
                if parse_iso_datetime(s).is_some() {
                    dates += 1;
                }
            }
            _ => other += 1,
        }
    }
    let non_null = ints + floats + bools + strings + other;
    if non_null == 0 {
        return AtomicType::String;
    }
    if bools == non_null {
        AtomicType::Boolean
    } else if ints == non_null {
        AtomicType::Integer
    } else if ints + floats == non_null {
        AtomicType::Number
    } else if strings == non_null && dates as f64 >= DATE_DETECTION_THRESHOLD * non_null as f64 {
        AtomicType::Date
    } else {
        AtomicType::String
    }
}
