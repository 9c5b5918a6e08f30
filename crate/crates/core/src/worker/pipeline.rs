use crate::cache::Cache;
use crate::catalog::Catalog;
use crate::config::VirtualCosts;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::storage::DataLake;
use crate::task::{JoinSide, OperatorSpec, TaskInput, TaskMessage};
use crate::types::{Field, RowBatch, Schema};
use crate::udf::UdfRuntime;

use super::kernels::{exec_hash_partition, exec_probe_join};

/// Read-only services a pipeline needs.
pub struct ExecContext<'a> {
    pub catalog: &'a Catalog,
    pub lake: &'a DataLake,
    pub cache: &'a Cache,
    pub costs: &'a VirtualCosts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// `(cache key, batch)` per output; several for a trailing partition.
    pub outputs: Vec<(String, RowBatch)>,
    pub rows_in: u64,
    pub rows_out: u64,
    pub virtual_ms: f64,
    pub udf_calls: u64,
}

fn read_scan(
    ctx: &ExecContext,
    table: &str,
    alias: &str,
    fields: &[Field],
    filter: Option<&Expr>,
    inputs: &[TaskInput],
    udfs: &mut UdfRuntime,
) -> Result<(RowBatch, u64)> {
    let def = ctx
        .catalog
        .table(table)
        .ok_or_else(|| Error::UnknownTable(table.to_string()))?;
    let schema = Schema::new(fields.to_vec());
    let prefix = format!("{alias}.");
    let bare: Vec<&str> = fields
        .iter()
        .map(|f| {
            f.name
                .strip_prefix(&prefix)
                .ok_or_else(|| Error::UnknownColumn(f.name.clone()))
        })
        .collect::<Result<_>>()?;
    let mut out = RowBatch::empty(schema.clone());
    let mut read = 0u64;
    for input in inputs {
        let TaskInput::Partition(part) = input else {
            return Err(Error::SchemaMismatch(
                "scan task given a cache input".into(),
            ));
        };
        let raw = ctx.lake.read_partition(&def, part)?.project(&bare)?;
        read += raw.num_rows() as u64;
        for row in raw.rows {
            if let Some(p) = filter {
                if !p.eval_predicate(&schema, &row, udfs)? {
                    continue;
                }
            }
            out.rows.push(row);
        }
    }
    Ok((out, read))
}

fn read_cache(ctx: &ExecContext, inputs: &[TaskInput], want: Option<JoinSide>) -> Result<RowBatch> {
    let mut batches = Vec::new();
    for input in inputs {
        match input {
            TaskInput::Cache { key, side } if *side == want => batches.push(ctx.cache.get(key)?),
            TaskInput::Cache { .. } => {}
            TaskInput::Partition(_) => {
                return Err(Error::SchemaMismatch(
                    "partition input without a scan".into(),
                ))
            }
        }
    }
    let Some(first) = batches.first() else {
        return Err(Error::SchemaMismatch(format!(
            "task has no {want:?} cache input"
        )));
    };
    let schema = first.schema.clone();
    RowBatch::concat(&schema, batches.iter().map(|b| b.as_ref()))
}

/// Runs the task's operators in order and returns its cache outputs.
/// Virtual time is the sum of per-row operator costs plus UDF item costs,
/// the latter divided by the UDF's GPU speedup when `accelerated`.
pub fn exec_pipeline(
    ctx: &ExecContext,
    task: &TaskMessage,
    accelerated: bool,
) -> Result<PipelineOutput> {
    let costs = ctx.costs;
    let mut udfs = UdfRuntime::new(ctx.catalog, ctx.lake, accelerated);
    let mut ops = task.pipeline.iter().peekable();
    let mut vms = costs.task_overhead;

    let (mut batch, rows_in) = match ops.peek() {
        Some(OperatorSpec::Scan {
            table,
            alias,
            fields,
            filter,
        }) => {
            ops.next();
            let (b, read) = read_scan(
                ctx,
                table,
                alias,
                fields,
                filter.as_ref(),
                &task.inputs,
                &mut udfs,
            )?;
            vms += costs.scan_row * read as f64;
            (b, read)
        }
        Some(OperatorSpec::HashJoinProbe {
            build_key,
            probe_key,
        }) => {
            ops.next();
            let build = read_cache(ctx, &task.inputs, Some(JoinSide::Build))?;
            let probe = read_cache(ctx, &task.inputs, Some(JoinSide::Probe))?;
            let n = (build.num_rows() + probe.num_rows()) as u64;
            vms += costs.probe_row * probe.num_rows() as f64;
            (exec_probe_join(&build, &probe, build_key, probe_key)?, n)
        }
        _ => {
            let b = read_cache(ctx, &task.inputs, None)?;
            let n = b.num_rows() as u64;
            (b, n)
        }
    };

    let mut partitioned = None;
    for op in ops {
        if partitioned.is_some() {
            return Err(Error::SchemaMismatch(
                "operator after hash partition".into(),
            ));
        }
        match op {
            OperatorSpec::SchemaMap { derive } => {
                let mut schema = batch.schema.clone();
                let srcs = derive
                    .iter()
                    .map(|d| {
                        batch
                            .schema
                            .index_of(&d.source)
                            .ok_or_else(|| Error::UnknownColumn(d.source.clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                schema
                    .fields
                    .extend(derive.iter().map(|d| Field::new(&d.name, d.value_type)));
                let mut rows = Vec::with_capacity(batch.rows.len());
                for mut row in std::mem::take(&mut batch.rows) {
                    for (d, &s) in derive.iter().zip(&srcs) {
                        let v = crate::expr::UdfEvaluator::call(
                            &mut udfs,
                            &d.udf,
                            std::slice::from_ref(&row[s]),
                        )?;
                        row.push(v);
                    }
                    rows.push(row);
                }
                batch = RowBatch::try_new(schema, rows)?;
            }
            OperatorSpec::Select { predicate } => {
                vms += costs.select_row * batch.num_rows() as f64;
                let mut kept = Vec::new();
                for row in std::mem::take(&mut batch.rows) {
                    if predicate.eval_predicate(&batch.schema, &row, &mut udfs)? {
                        kept.push(row);
                    }
                }
                batch.rows = kept;
            }
            OperatorSpec::Project { items } => {
                vms += costs.project_row * batch.num_rows() as f64;
                let schema = Schema::new(
                    items
                        .iter()
                        .map(|i| Field::new(&i.name, i.value_type))
                        .collect(),
                );
                let mut rows = Vec::with_capacity(batch.rows.len());
                for row in &batch.rows {
                    rows.push(
                        items
                            .iter()
                            .map(|i| i.expr.eval(&batch.schema, row, &mut udfs))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                batch = RowBatch::try_new(schema, rows)?;
            }
            OperatorSpec::HashJoinPartition { key, buckets } => {
                vms += costs.partition_row * batch.num_rows() as f64;
                partitioned = Some(exec_hash_partition(&batch, key, *buckets)?);
            }
            OperatorSpec::Scan { .. } | OperatorSpec::HashJoinProbe { .. } => {
                return Err(Error::SchemaMismatch(format!(
                    "{} must be the first operator of a task",
                    op.name()
                )));
            }
        }
    }
    vms += udfs.cost_ms;

    let keys = task.output_keys();
    let (outputs, rows_out) = match partitioned {
        Some(parts) => {
            let n = parts.iter().map(|p| p.num_rows() as u64).sum();
            (keys.into_iter().zip(parts).collect(), n)
        }
        None => {
            let n = batch.num_rows() as u64;
            (vec![(task.output_key.clone(), batch)], n)
        }
    };
    Ok(PipelineOutput {
        outputs,
        rows_in,
        rows_out,
        virtual_ms: vms,
        udf_calls: udfs.calls,
    })
}
