use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{parse_value, Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ValueType) -> Self {
        Column {
            name: name.into(),
            ty,
        }
    }
}

/// Typed tabular data. Every row has one value per column of the column's type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(with = "cells")]
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn empty(name: impl Into<String>, columns: Vec<Column>) -> Self {
        Table {
            name: name.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checks the row/column invariant.
    pub fn check(&self) -> Result<(), String> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(format!(
                    "row {} has {} values, expected {}",
                    i + 1,
                    row.len(),
                    self.columns.len()
                ));
            }
            for (cell, col) in row.iter().zip(&self.columns) {
                if cell.value_type() != col.ty {
                    return Err(format!(
                        "row {} column '{}' holds a {} value, expected {}",
                        i + 1,
                        col.name,
                        cell.value_type(),
                        col.ty
                    ));
                }
            }
        }
        Ok(())
    }

    /// Renders the table back to the typed-header CSV fixture format.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        wtr.write_record(self.columns.iter().map(|c| format!("{}:{}", c.name, c.ty)))
            .expect("in-memory write");
        for row in &self.rows {
            wtr.write_record(row.iter().map(Value::render))
                .expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

/// Table cells on the wire: longs, reals and bools as JSON scalars,
/// everything else in canonical text form. Column types drive decoding.
mod cells {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};
    use serde_json::Value as Json;

    pub fn serialize<S: Serializer>(rows: &[Vec<Value>], s: S) -> Result<S::Ok, S::Error> {
        let json: Vec<Vec<Json>> = rows
            .iter()
            .map(|r| r.iter().map(to_json).collect())
            .collect();
        json.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<Value>>, D::Error> {
        let json: Vec<Vec<Json>> = Vec::deserialize(d)?;
        json.into_iter()
            .map(|r| r.into_iter().map(from_json).collect::<Result<_, _>>())
            .collect::<Result<_, String>>()
            .map_err(D::Error::custom)
    }

    pub fn to_json(v: &Value) -> Json {
        match v {
            Value::Long(n) => Json::from(*n),
            Value::Real(f) => serde_json::Number::from_f64(*f)
                .map(Json::Number)
                .unwrap_or_else(|| Json::String(v.render())),
            Value::Bool(b) => Json::Bool(*b),
            other => Json::String(other.render()),
        }
    }

    // Without column types the best we can do is a structural guess; tables
    // read back this way are only used for display.
    fn from_json(j: Json) -> Result<Value, String> {
        match j {
            Json::Bool(b) => Ok(Value::Bool(b)),
            Json::Number(n) => match n.as_i64() {
                Some(i) => Ok(Value::Long(i)),
                None => Ok(Value::Real(n.as_f64().unwrap_or(f64::NAN))),
            },
            Json::String(s) => Ok(Value::String(s)),
            other => Err(format!("unsupported cell {other}")),
        }
    }
}

pub use cells::to_json as cell_to_json;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("table '{table}': bad header: {message}")]
    Header { table: String, message: String },
    #[error("table '{table}' row {row}: {message}")]
    Row {
        table: String,
        row: usize,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

/// Parses a typed-header CSV (`col:type,...`) into a table.
pub fn load_table_csv(name: &str, text: &str) -> Result<Table, LoadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| LoadError::Header {
            table: name.into(),
            message: e.to_string(),
        })?,
        None => {
            return Err(LoadError::Header {
                table: name.into(),
                message: "missing header row".into(),
            })
        }
    };
    let mut columns = Vec::with_capacity(header.len());
    for field in header.iter() {
        let (col, ty) = field.split_once(':').ok_or_else(|| LoadError::Header {
            table: name.into(),
            message: format!("column '{field}' must be written as name:type"),
        })?;
        let ty: ValueType = ty.parse().map_err(|e: crate::value::UnknownType| LoadError::Header {
            table: name.into(),
            message: e.to_string(),
        })?;
        let col = col.trim();
        if col.is_empty() || columns.iter().any(|c: &Column| c.name == col) {
            return Err(LoadError::Header {
                table: name.into(),
                message: format!("column name '{col}' is empty or repeated"),
            });
        }
        columns.push(Column::new(col, ty));
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let row_no = i + 1;
        let rec = rec.map_err(|e| LoadError::Row {
            table: name.into(),
            row: row_no,
            message: e.to_string(),
        })?;
        if rec.len() != columns.len() {
            return Err(LoadError::Row {
                table: name.into(),
                row: row_no,
                message: format!("expected {} values, found {}", columns.len(), rec.len()),
            });
        }
        let mut row = Vec::with_capacity(columns.len());
        for (raw, col) in rec.iter().zip(&columns) {
            row.push(parse_value(raw, col.ty).map_err(|e| LoadError::Row {
                table: name.into(),
                row: row_no,
                message: format!("column '{}': {e}", col.name),
            })?);
        }
        rows.push(row);
    }
    Ok(Table {
        name: name.into(),
        columns,
        rows,
    })
}

/// Fixture manifest: table name to CSV path (relative to the manifest).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureManifest {
    pub tables: BTreeMap<String, PathBuf>,
    /// Source names the local evaluator answers for; defaults to `["Kusto"]`.
    #[serde(default)]
    pub sources: Vec<String>,
}

/// In-memory table registry. Loaded during setup, then read concurrently.
#[derive(Debug, Default)]
pub struct TableStore {
    tables: RwLock<BTreeMap<String, Arc<Table>>>,
}

impl TableStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, table: Table) {
        self.tables
            .write()
            .expect("table store poisoned")
            .insert(table.name.clone(), Arc::new(table));
    }

    pub fn get(&self, name: &str) -> Option<Arc<Table>> {
        self.tables.read().expect("table store poisoned").get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        self.tables.read().expect("table store poisoned").keys().cloned().collect()
    }

    /// Appends rows to a table, creating it with `columns` when absent.
    pub fn append_rows(&self, name: &str, columns: &[Column], rows: Vec<Vec<Value>>) -> Result<(), String> {
        let mut guard = self.tables.write().expect("table store poisoned");
        let entry = guard
            .entry(name.to_string())
            .or_insert_with(|| Arc::new(Table::empty(name, columns.to_vec())));
        let table = Arc::make_mut(entry);
        if table.columns != columns {
            return Err(format!("rows for '{name}' do not match the table schema"));
        }
        table.rows.extend(rows);
        table.check()
    }

    pub fn load_csv_file(&self, name: &str, path: &Path) -> Result<(), LoadError> {
        let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.insert(load_table_csv(name, &text)?);
        Ok(())
    }

    /// Loads every table listed in a manifest file and returns the manifest.
    pub fn load_manifest(&self, path: &Path) -> Result<FixtureManifest, LoadError> {
        let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: FixtureManifest =
            serde_json::from_str(&text).map_err(|e| LoadError::Manifest {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for (name, rel) in &manifest.tables {
            self.load_csv_file(name, &dir.join(rel))?;
        }
        Ok(manifest)
    }
}
