//! Row-oriented value model shared by every subsystem.
//!
//! There is no NULL: every cell holds a concrete value of its column's
//! declared type.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Int64,
    Float64,
    String,
    Bool,
    BlobRef,
}

impl ValueType {
    pub fn name(self) -> &'static str {
        match self {
            ValueType::Int64 => "int64",
            ValueType::Float64 => "float64",
            ValueType::String => "string",
            ValueType::Bool => "bool",
            ValueType::BlobRef => "blob_ref",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "int64" => Ok(ValueType::Int64),
            "float64" => Ok(ValueType::Float64),
            "string" => Ok(ValueType::String),
            "bool" => Ok(ValueType::Bool),
            "blob_ref" => Ok(ValueType::BlobRef),
            other => Err(Error::UnknownValueType(other.to_string())),
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Int64 | ValueType::Float64)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single cell.
///
/// `BlobRef` holds a data-lake-relative file path; it never contains a
/// parent traversal and is never absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Int64(i64),
    Float64(f64),
    String(String),
    Bool(bool),
    BlobRef(String),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Int64(_) => ValueType::Int64,
            Value::Float64(_) => ValueType::Float64,
            Value::String(_) => ValueType::String,
            Value::Bool(_) => ValueType::Bool,
            Value::BlobRef(_) => ValueType::BlobRef,
        }
    }

    pub fn blob_ref(path: impl Into<String>) -> Result<Value> {
        let path = path.into();
        validate_blob_path(&path)?;
        Ok(Value::BlobRef(path))
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int64(v) => Some(*v as f64),
            Value::Float64(v) => Some(*v),
            _ => None,
        }
    }

    /// Parses the textual CSV form of a value of type `ty`.
    pub fn parse_as(text: &str, ty: ValueType) -> std::result::Result<Value, String> {
        match ty {
            ValueType::Int64 => text
                .parse::<i64>()
                .map(Value::Int64)
                .map_err(|e| format!("bad int64 {text:?}: {e}")),
            ValueType::Float64 => text
                .parse::<f64>()
                .map(Value::Float64)
                .map_err(|e| format!("bad float64 {text:?}: {e}")),
            ValueType::String => Ok(Value::String(text.to_string())),
            ValueType::Bool => match text {
                "true" => Ok(Value::Bool(true)),
                "false" => Ok(Value::Bool(false)),
                _ => Err(format!("bad bool {text:?}")),
            },
            ValueType::BlobRef => {
                validate_blob_path(text).map_err(|e| e.to_string())?;
                Ok(Value::BlobRef(text.to_string()))
            }
        }
    }

    /// Approximate in-memory footprint used for cache accounting.
    pub fn byte_size(&self) -> u64 {
        match self {
            Value::Int64(_) | Value::Float64(_) => 8,
            Value::Bool(_) => 1,
            Value::String(s) | Value::BlobRef(s) => s.len() as u64,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int64(v) => write!(f, "{v}"),
            Value::Float64(v) => write!(f, "{v}"),
            Value::String(s) | Value::BlobRef(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

pub(crate) fn validate_blob_path(path: &str) -> Result<()> {
    let p = std::path::Path::new(path);
    if path.is_empty()
        || p.is_absolute()
        || path.starts_with('/')
        || p.components()
            .any(|c| !matches!(c, std::path::Component::Normal(_)))
    {
        return Err(Error::InvalidBlobRef(path.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub value_type: ValueType,
}

impl Field {
    pub fn new(name: impl Into<String>, value_type: ValueType) -> Self {
        Field {
            name: name.into(),
            value_type,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub fields: Vec<Field>,
}

impl Schema {
    pub fn new(fields: Vec<Field>) -> Self {
        Schema { fields }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }
}

pub type Row = Vec<Value>;

/// An ordered schema plus rows; the unit of data exchanged through the cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowBatch {
    pub schema: Schema,
    pub rows: Vec<Row>,
}

impl RowBatch {
    pub fn empty(schema: Schema) -> Self {
        RowBatch {
            schema,
            rows: Vec::new(),
        }
    }

    /// Builds a batch, checking arity and value types of every row.
    pub fn try_new(schema: Schema, rows: Vec<Row>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::SchemaMismatch(format!(
                    "row {i} has {} values, schema has {}",
                    row.len(),
                    schema.len()
                )));
            }
            for (v, f) in row.iter().zip(&schema.fields) {
                if v.value_type() != f.value_type {
                    return Err(Error::SchemaMismatch(format!(
                        "row {i} column {}: expected {}, got {}",
                        f.name,
                        f.value_type,
                        v.value_type()
                    )));
                }
            }
        }
        Ok(RowBatch { schema, rows })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn byte_size(&self) -> u64 {
        let header: u64 = self.schema.fields.iter().map(|f| f.name.len() as u64).sum();
        header
            + self
                .rows
                .iter()
                .flat_map(|r| r.iter())
                .map(Value::byte_size)
                .sum::<u64>()
    }

    /// Concatenates batches that share one schema. `schema` is used when
    /// the iterator is empty.
    pub fn concat<'a>(
        schema: &Schema,
        batches: impl IntoIterator<Item = &'a RowBatch>,
    ) -> Result<RowBatch> {
        let mut out = RowBatch::empty(schema.clone());
        for b in batches {
            if b.schema != out.schema {
                return Err(Error::SchemaMismatch(format!(
                    "cannot concatenate [{}] with [{}]",
                    b.schema.names().collect::<Vec<_>>().join(","),
                    out.schema.names().collect::<Vec<_>>().join(",")
                )));
            }
            out.rows.extend(b.rows.iter().cloned());
        }
        Ok(out)
    }

    /// Keeps only the named columns, in the given order.
    pub fn project(&self, names: &[&str]) -> Result<RowBatch> {
        let idx = names
            .iter()
            .map(|n| {
                self.schema
                    .index_of(n)
                    .ok_or_else(|| Error::UnknownColumn(n.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let schema = Schema::new(idx.iter().map(|&i| self.schema.fields[i].clone()).collect());
        let rows = self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
            .collect();
        Ok(RowBatch { schema, rows })
    }
}
