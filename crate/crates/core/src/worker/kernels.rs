//! GRACE hash-join kernels.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::hash::{bucket_of, key_bytes};
use crate::planner::logical::join_schema;
use crate::types::{RowBatch, ValueType};

fn key_index(batch: &RowBatch, key: &str) -> Result<usize> {
    let i = batch
        .schema
        .index_of(key)
        .ok_or_else(|| Error::MissingKeyColumn(key.to_string()))?;
    if batch.schema.fields[i].value_type == ValueType::Float64 {
        return Err(Error::UnhashableKey(format!("{key} is float64")));
    }
    Ok(i)
}

/// Splits `batch` into `buckets` batches; row `r` lands in bucket
/// `fnv1a64(key(r)) % buckets`. Row order within a bucket is preserved.
pub fn exec_hash_partition(batch: &RowBatch, key: &str, buckets: u32) -> Result<Vec<RowBatch>> {
    if buckets == 0 {
        return Err(Error::Config("bucket count must be at least 1".into()));
    }
    let k = key_index(batch, key)?;
    let mut out: Vec<RowBatch> = (0..buckets)
        .map(|_| RowBatch::empty(batch.schema.clone()))
        .collect();
    for row in &batch.rows {
        let b = bucket_of(&row[k], buckets)?;
        out[b as usize].rows.push(row.clone());
    }
    Ok(out)
}

/// Inner equi-join of one bucket pair. Output columns are the build
/// columns followed by the probe columns without the probe key. Rows come
/// out in probe order, matching build rows in build order.
pub fn exec_probe_join(
    build: &RowBatch,
    probe: &RowBatch,
    build_key: &str,
    probe_key: &str,
) -> Result<RowBatch> {
    let bk = key_index(build, build_key)?;
    let pk = key_index(probe, probe_key)?;
    let (bt, pt) = (
        build.schema.fields[bk].value_type,
        probe.schema.fields[pk].value_type,
    );
    if bt != pt {
        return Err(Error::TypeMismatch(format!(
            "join key {build_key} is {bt}, {probe_key} is {pt}"
        )));
    }
    let schema = join_schema(&build.schema, &probe.schema, probe_key);
    let mut seen = std::collections::HashSet::new();
    for f in &schema.fields {
        if !seen.insert(f.name.as_str()) {
            return Err(Error::SchemaMismatch(format!(
                "join output repeats column {}",
                f.name
            )));
        }
    }
    let mut table: HashMap<Vec<u8>, Vec<usize>> = HashMap::new();
    for (i, row) in build.rows.iter().enumerate() {
        table.entry(key_bytes(&row[bk])?).or_default().push(i);
    }
    let mut out = RowBatch::empty(schema);
    for prow in &probe.rows {
        let Some(matches) = table.get(&key_bytes(&prow[pk])?) else {
            continue;
        };
        for &bi in matches {
            let mut row = build.rows[bi].clone();
            row.extend(
                prow.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != pk)
                    .map(|(_, v)| v.clone()),
            );
            out.rows.push(row);
        }
    }
    Ok(out)
}

/// Reference nested-loop join with the same output layout.
pub fn nested_loop_join(
    left: &RowBatch,
    right: &RowBatch,
    left_key: &str,
    right_key: &str,
) -> Result<RowBatch> {
    let lk = key_index(left, left_key)?;
    let rk = key_index(right, right_key)?;
    let mut out = RowBatch::empty(join_schema(&left.schema, &right.schema, right_key));
    for lrow in &left.rows {
        for rrow in &right.rows {
            if lrow[lk] == rrow[rk] {
                let mut row = lrow.clone();
                row.extend(
                    rrow.iter()
                        .enumerate()
                        .filter(|(j, _)| *j != rk)
                        .map(|(_, v)| v.clone()),
                );
                out.rows.push(row);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::{fnv1a64, sorted_rows};
    use crate::types::{Field, Schema, Value};

    fn table(prefix: &str, rows: &[(i64, &str)]) -> RowBatch {
        RowBatch::try_new(
            Schema::new(vec![
                Field::new(format!("{prefix}.id"), ValueType::Int64),
                Field::new(format!("{prefix}.v"), ValueType::String),
            ]),
            rows.iter()
                .map(|(k, v)| vec![Value::Int64(*k), Value::String(v.to_string())])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn partition_follows_fnv_of_le_bytes() {
        let t = table("a", &[(1, "w"), (2, "x"), (3, "y"), (4, "z")]);
        let parts = exec_hash_partition(&t, "a.id", 2).unwrap();
        for (b, part) in parts.iter().enumerate() {
            for row in &part.rows {
                let Value::Int64(k) = row[0] else { panic!() };
                assert_eq!(fnv1a64(&k.to_le_bytes()) % 2, b as u64);
            }
        }
        assert_eq!(parts.iter().map(|p| p.num_rows()).sum::<usize>(), 4);
        assert_eq!(exec_hash_partition(&t, "a.id", 1).unwrap()[0], t);
        let empty = exec_hash_partition(&table("a", &[]), "a.id", 3).unwrap();
        assert!(empty.iter().all(|b| b.num_rows() == 0) && empty.len() == 3);
        assert!(matches!(
            exec_hash_partition(&t, "a.nope", 2),
            Err(Error::MissingKeyColumn(_))
        ));
    }

    #[test]
    fn probe_two_by_two() {
        let b = table("a", &[(1, "a"), (2, "b")]);
        let p = table("b", &[(2, "x"), (3, "y")]);
        let j = exec_probe_join(&b, &p, "a.id", "b.id").unwrap();
        assert_eq!(j.schema.names().collect::<Vec<_>>(), ["a.id", "a.v", "b.v"]);
        assert_eq!(
            j.rows,
            vec![vec![
                Value::Int64(2),
                Value::String("b".into()),
                Value::String("x".into())
            ]]
        );
        assert_eq!(
            exec_probe_join(&b, &table("b", &[]), "a.id", "b.id")
                .unwrap()
                .num_rows(),
            0
        );
    }

    #[test]
    fn duplicate_keys_multiply() {
        let b = table("a", &[(5, "1"), (5, "2")]);
        let p = table("b", &[(5, "x"), (5, "y"), (5, "z")]);
        let j = exec_probe_join(&b, &p, "a.id", "b.id").unwrap();
        assert_eq!(j.num_rows(), 6);
        assert_eq!(
            sorted_rows(&j),
            sorted_rows(&nested_loop_join(&b, &p, "a.id", "b.id").unwrap())
        );
    }

    #[test]
    fn float_keys_rejected() {
        let t = RowBatch::try_new(
            Schema::new(vec![Field::new("a.f", ValueType::Float64)]),
            vec![vec![Value::Float64(1.0)]],
        )
        .unwrap();
        assert!(matches!(
            exec_hash_partition(&t, "a.f", 2),
            Err(Error::UnhashableKey(_))
        ));
    }
}
