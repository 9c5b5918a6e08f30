//! SQL to staged tasks: parse, bind, optimize, assign resources, group.

pub mod logical;
pub mod optimize;
pub mod physical;
pub mod sql;

pub use logical::{build_logical, join_schema, DerivedColumn, LogicalPlan, ProjectItem};
pub use optimize::optimize;
pub use physical::{
    assign_resources, queue_for, DataClass, Disk, Group, Memory, OpKind, PhysicalNode,
    PhysicalPlan, PlanMode, Processing, ResourceSpec, StagedGroup, StagedPlan,
};
pub use sql::parse_sql;

use crate::catalog::Catalog;
use crate::error::Result;

/// Parses, binds, validates, and optimizes `sql`.
pub fn plan_logical(sql: &str, catalog: &Catalog) -> Result<LogicalPlan> {
    let parsed = parse_sql(sql)?;
    let plan = build_logical(&parsed, catalog)?;
    catalog.validate_query(&plan)?;
    let plan = optimize(&plan, catalog);
    catalog.validate_query(&plan)?;
    Ok(plan)
}

pub fn plan_query(
    sql: &str,
    catalog: &Catalog,
    mode: PlanMode,
    buckets: u32,
) -> Result<PhysicalPlan> {
    PhysicalPlan::from_logical(&plan_logical(sql, catalog)?, catalog, mode, buckets)
}

pub fn explain(sql: &str, catalog: &Catalog, mode: PlanMode, buckets: u32) -> Result<String> {
    Ok(plan_query(sql, catalog, mode, buckets)?.explain())
}
