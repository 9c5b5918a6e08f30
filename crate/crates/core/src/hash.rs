//! Fixed 64-bit FNV-1a hashing and the canonical byte encodings fed to it.
//!
//! Every worker must agree bit-for-bit on bucket assignment, so the hash
//! and the encoding are pinned here rather than delegated to `std::hash`.

use crate::error::{Error, Result};
use crate::types::{Row, RowBatch, Value};

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET_BASIS;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Canonical encoding of a join/partition key.
///
/// int64: 8 little-endian bytes; string and blob_ref: UTF-8 bytes; bool: one
/// byte. float64 keys are rejected.
pub fn key_bytes(value: &Value) -> Result<Vec<u8>> {
    match value {
        Value::Int64(v) => Ok(v.to_le_bytes().to_vec()),
        Value::String(s) | Value::BlobRef(s) => Ok(s.as_bytes().to_vec()),
        Value::Bool(b) => Ok(vec![u8::from(*b)]),
        Value::Float64(_) => Err(Error::UnhashableKey("float64".into())),
    }
}

pub fn key_hash(value: &Value) -> Result<u64> {
    key_bytes(value).map(|b| fnv1a64(&b))
}

pub fn bucket_of(value: &Value, buckets: u32) -> Result<u32> {
    Ok((key_hash(value)? % u64::from(buckets)) as u32)
}

/// Self-delimiting encoding of a whole row, used for multiset comparison.
pub fn row_bytes(row: &Row) -> Vec<u8> {
    let mut out = Vec::new();
    for v in row {
        match v {
            Value::Int64(x) => {
                out.push(0);
                out.extend_from_slice(&x.to_le_bytes());
            }
            Value::Float64(x) => {
                out.push(1);
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
            Value::String(s) => {
                out.push(2);
                out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            Value::Bool(b) => {
                out.push(3);
                out.push(u8::from(*b));
            }
            Value::BlobRef(s) => {
                out.push(4);
                out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    out
}

/// Sorted row encodings; two batches hold the same multiset of rows iff
/// these are equal.
pub fn sorted_rows(batch: &RowBatch) -> Vec<Vec<u8>> {
    let mut rows: Vec<Vec<u8>> = batch.rows.iter().map(row_bytes).collect();
    rows.sort_unstable();
    rows
}

/// Order-independent digest of a result: column names plus the row multiset.
pub fn result_hash(batch: &RowBatch) -> String {
    let mut buf = Vec::new();
    for f in &batch.schema.fields {
        buf.extend_from_slice(f.name.as_bytes());
        buf.push(0);
    }
    buf.push(0xff);
    for r in sorted_rows(batch) {
        buf.extend_from_slice(&(r.len() as u64).to_le_bytes());
        buf.extend_from_slice(&r);
    }
    format!("{:016x}", fnv1a64(&buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Field, Schema, ValueType};

    // Published FNV-1a 64-bit test vectors.
    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn key_encoding_is_canonical() {
        assert_eq!(
            key_bytes(&Value::Int64(1)).unwrap(),
            vec![1, 0, 0, 0, 0, 0, 0, 0]
        );
        assert_eq!(key_bytes(&Value::Bool(true)).unwrap(), vec![1]);
        assert_eq!(
            key_bytes(&Value::String("ab".into())).unwrap(),
            b"ab".to_vec()
        );
        assert!(matches!(
            key_bytes(&Value::Float64(1.0)),
            Err(Error::UnhashableKey(_))
        ));
    }

    #[test]
    fn result_hash_ignores_row_order() {
        let schema = Schema::new(vec![Field::new("id", ValueType::Int64)]);
        let a = RowBatch::try_new(
            schema.clone(),
            vec![vec![Value::Int64(1)], vec![Value::Int64(2)]],
        )
        .unwrap();
        let b = RowBatch::try_new(
            schema.clone(),
            vec![vec![Value::Int64(2)], vec![Value::Int64(1)]],
        )
        .unwrap();
        let c =
            RowBatch::try_new(schema, vec![vec![Value::Int64(2)], vec![Value::Int64(2)]]).unwrap();
        assert_eq!(result_hash(&a), result_hash(&b));
        assert_ne!(result_hash(&a), result_hash(&c));
    }

    #[test]
    fn row_encoding_does_not_alias_across_boundaries() {
        let r1 = vec![Value::String("ab".into()), Value::String("c".into())];
        let r2 = vec![Value::String("a".into()), Value::String("bc".into())];
        assert_ne!(row_bytes(&r1), row_bytes(&r2));
    }
}
