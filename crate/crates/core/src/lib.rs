//! Query engine that routes each operator to the worker class suited to it
//! and pipelines intermediate results through a shared in-memory cache.

pub mod broker;
pub mod cache;
pub mod catalog;
pub mod config;
pub mod coordinator;
pub mod engine;
pub mod error;
pub mod expr;
pub mod hash;
pub mod metrics;
pub mod planner;
pub mod reference;
pub mod storage;
pub mod task;
pub mod types;
pub mod udf;
pub mod worker;

pub use catalog::{
    Catalog, ColumnDef, ColumnSource, TableKind, UdfComplexity, UdfDef, VirtualTableDef,
};
pub use error::{Error, Result};
pub use expr::{CmpOp, Expr};
pub use planner::{PlanMode, ResourceSpec};
pub use storage::{DataLake, PartitionRef};
pub use task::{QueueKey, TaskMessage};
pub use types::{Field, Row, RowBatch, Schema, Value, ValueType};
