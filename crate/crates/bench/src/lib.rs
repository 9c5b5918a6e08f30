//! Fixtures shared by the criterion benches.

use disagg_core::config::NodeType;
use disagg_core::metrics::SimTask;
use disagg_core::storage::{generate_demo_data, DemoSpec};
use disagg_core::udf::builtin_udfs;
use disagg_core::{Catalog, DataLake, Field, QueueKey, RowBatch, Schema, Value, ValueType};

/// `rows` rows of `(prefix.k int64, prefix.v string)` with keys cycling
/// through `0..distinct`.
pub fn keyed_batch(prefix: &str, rows: usize, distinct: i64) -> RowBatch {
    RowBatch::try_new(
        Schema::new(vec![
            Field::new(format!("{prefix}.k"), ValueType::Int64),
            Field::new(format!("{prefix}.v"), ValueType::String),
        ]),
        (0..rows)
            .map(|i| {
                vec![
                    Value::Int64((i as i64 * 7919) % distinct.max(1)),
                    Value::String(format!("{prefix}-{i}")),
                ]
            })
            .collect(),
    )
    .expect("fixture schema matches rows")
}

/// A demo lake in a temporary directory with a registered catalog.
pub fn demo_catalog(rows: u64) -> (tempfile::TempDir, Catalog) {
    let dir = tempfile::tempdir().expect("tempdir");
    let lake = DataLake::new(dir.path());
    let catalog = Catalog::new();
    for u in builtin_udfs() {
        catalog.register_udf(u).expect("builtin udf");
    }
    for t in generate_demo_data(dir.path(), &DemoSpec::with_rows(rows), 1).expect("demo data") {
        catalog.register_table(t, &lake).expect("demo table");
    }
    (dir, catalog)
}

/// Scan-partition-probe shaped task graph: `width` independent GPU tasks,
/// each followed by a CPU task, all feeding one himem task.
pub fn layered_tasks(width: usize) -> Vec<SimTask> {
    let mut tasks = Vec::with_capacity(2 * width + 1);
    for i in 0..width {
        tasks.push(SimTask {
            id: format!("s{i}"),
            queue: QueueKey::gpu(),
            duration_ms: 1000.0 + i as f64,
            depends_on: vec![],
        });
    }
    for i in 0..width {
        tasks.push(SimTask {
            id: format!("p{i}"),
            queue: QueueKey::cpu_general(),
            duration_ms: 250.0,
            depends_on: vec![format!("s{i}")],
        });
    }
    tasks.push(SimTask {
        id: "j".into(),
        queue: QueueKey::cpu_himem(),
        duration_ms: 500.0,
        depends_on: (0..width).map(|i| format!("p{i}")).collect(),
    });
    tasks
}

pub fn fleet(general: u32, gpu: u32) -> disagg_core::config::WorkerCounts {
    [(NodeType::General, general), (NodeType::Gpu, gpu)]
        .into_iter()
        .collect()
}
