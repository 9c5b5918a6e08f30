#![allow(dead_code)]

use std::path::Path;

use disagg_core::config::{parse_worker_counts, ClusterConfig};
use disagg_core::engine::{Engine, EngineOptions};
use disagg_core::metrics::Suite;
use disagg_core::storage::{generate_demo_data, DemoSpec};
use disagg_core::udf::builtin_udfs;
use disagg_core::{Catalog, DataLake};

pub const SUITE: &str = include_str!("../../../../suites/q1-q6.toml");

pub fn suite() -> Suite {
    Suite::parse("q1-q6", SUITE).expect("bundled suite parses")
}

pub struct DemoLake {
    pub dir: tempfile::TempDir,
    pub lake: DataLake,
    pub catalog: Catalog,
}

impl DemoLake {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    /// Starts an engine over this lake with a freshly loaded catalog.
    pub fn engine(&self, workers: &str) -> Engine {
        let config = ClusterConfig::with_workers(parse_worker_counts(workers).unwrap());
        Engine::open(self.root(), config, EngineOptions::default()).unwrap()
    }
}

/// Generates the demo tables with `rows` rows each, registers the built-in
/// UDFs, and saves the catalog under the lake root.
pub fn demo_lake(rows: u64, seed: u64) -> DemoLake {
    let dir = tempfile::tempdir().unwrap();
    let lake = DataLake::new(dir.path());
    let catalog = Catalog::new();
    for u in builtin_udfs() {
        catalog.register_udf(u).unwrap();
    }
    for t in generate_demo_data(dir.path(), &DemoSpec::with_rows(rows), seed).unwrap() {
        catalog.register_table(t, &lake).unwrap();
    }
    catalog.save(dir.path()).unwrap();
    DemoLake { dir, lake, catalog }
}
