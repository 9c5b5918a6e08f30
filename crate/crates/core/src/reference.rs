//! Single-node reference executor used as a correctness oracle. It runs
//! the bound, unoptimized plan in one thread with nested-loop joins and
//! shares no code with the staged task path beyond expression evaluation.

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::expr::UdfEvaluator;
use crate::planner::logical::{build_logical, join_schema, LogicalPlan};
use crate::planner::sql::parse_sql;
use crate::storage::DataLake;
use crate::types::{Field, RowBatch, Schema};
use crate::udf::UdfRuntime;
use crate::worker::kernels::nested_loop_join;

pub fn execute_reference(sql: &str, catalog: &Catalog, lake: &DataLake) -> Result<RowBatch> {
    let plan = build_logical(&parse_sql(sql)?, catalog)?;
    catalog.validate_query(&plan)?;
    let mut udfs = UdfRuntime::new(catalog, lake, false);
    eval(&plan, catalog, lake, &mut udfs)
}

fn eval(
    plan: &LogicalPlan,
    catalog: &Catalog,
    lake: &DataLake,
    udfs: &mut UdfRuntime,
) -> Result<RowBatch> {
    match plan {
        LogicalPlan::Scan {
            table,
            alias,
            fields,
            filter,
        } => {
            let def = catalog
                .table(table)
                .ok_or_else(|| Error::UnknownTable(table.clone()))?;
            let prefix = format!("{alias}.");
            let bare: Vec<&str> = fields
                .iter()
                .map(|f| f.name.strip_prefix(&prefix).unwrap_or(&f.name))
                .collect();
            let schema = Schema::new(fields.clone());
            let mut out = RowBatch::empty(schema.clone());
            for part in lake.list_partitions(&def)? {
                for row in lake.read_partition(&def, &part)?.project(&bare)?.rows {
                    if let Some(f) = filter {
                        if !f.eval_predicate(&schema, &row, udfs)? {
                            continue;
                        }
                    }
                    out.rows.push(row);
                }
            }
            Ok(out)
        }
        LogicalPlan::SchemaMap { input, derive } => {
            let batch = eval(input, catalog, lake, udfs)?;
            let mut schema = batch.schema.clone();
            for d in derive {
                schema.fields.push(Field::new(&d.name, d.value_type));
            }
            let mut rows = Vec::with_capacity(batch.rows.len());
            for mut row in batch.rows {
                for d in derive {
                    let i = batch
                        .schema
                        .index_of(&d.source)
                        .ok_or_else(|| Error::UnknownColumn(d.source.clone()))?;
                    let v = udfs.call(&d.udf, std::slice::from_ref(&row[i]))?;
                    row.push(v);
                }
                rows.push(row);
            }
            RowBatch::try_new(schema, rows)
        }
        LogicalPlan::Select { input, predicate } => {
            let mut batch = eval(input, catalog, lake, udfs)?;
            let mut kept = Vec::new();
            for row in std::mem::take(&mut batch.rows) {
                if predicate.eval_predicate(&batch.schema, &row, udfs)? {
                    kept.push(row);
                }
            }
            batch.rows = kept;
            Ok(batch)
        }
        LogicalPlan::Project { input, items } => {
            let batch = eval(input, catalog, lake, udfs)?;
            let schema = Schema::new(
                items
                    .iter()
                    .map(|i| Field::new(&i.name, i.value_type))
                    .collect(),
            );
            let rows = batch
                .rows
                .iter()
                .map(|row| {
                    items
                        .iter()
                        .map(|i| i.expr.eval(&batch.schema, row, udfs))
                        .collect()
                })
                .collect::<Result<Vec<_>>>()?;
            RowBatch::try_new(schema, rows)
        }
        LogicalPlan::Join {
            left,
            right,
            left_key,
            right_key,
        }
        | LogicalPlan::HashJoinProbe {
            build: left,
            probe: right,
            build_key: left_key,
            probe_key: right_key,
        } => {
            let l = eval(left, catalog, lake, udfs)?;
            let r = eval(right, catalog, lake, udfs)?;
            let out = nested_loop_join(&l, &r, left_key, right_key)?;
            debug_assert_eq!(out.schema, join_schema(&l.schema, &r.schema, right_key));
            Ok(out)
        }
        LogicalPlan::HashJoinPartition { input, .. } => eval(input, catalog, lake, udfs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{generate_demo_data, DemoSpec};
    use crate::udf::builtin_udfs;

    #[test]
    fn reference_counts_match_hand_filter() {
        let dir = tempfile::tempdir().unwrap();
        let lake = DataLake::new(dir.path());
        let catalog = Catalog::new();
        for u in builtin_udfs() {
            catalog.register_udf(u).unwrap();
        }
        for t in generate_demo_data(dir.path(), &DemoSpec::with_rows(40), 7).unwrap() {
            catalog.register_table(t, &lake).unwrap();
        }
        let all = execute_reference("SELECT id FROM customer_s", &catalog, &lake).unwrap();
        assert_eq!(all.num_rows(), 40);
        let some =
            execute_reference("SELECT id FROM customer_s WHERE id <= 10", &catalog, &lake).unwrap();
        assert_eq!(some.num_rows(), 10);
        let joined = execute_reference(
            "SELECT c.id, p.smile FROM customer_s c JOIN pubchem_s p ON c.id = p.id",
            &catalog,
            &lake,
        )
        .unwrap();
        assert_eq!(joined.num_rows(), 40);
    }
}
