//! Logical plans and the binder that resolves a parsed query against the
//! catalog.
//!
//! Inside a plan every column is named `<alias>.<column>`. Only the final
//! projection produces display names.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::sql::{ColRef, SelectList, SqlExpr, SqlQuery, TableRef};
use crate::catalog::{Catalog, ColumnDef, VirtualTableDef};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::types::{Field, Schema, ValueType};

/// A column computed by a schema-map operator: `name = udf(source)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedColumn {
    pub name: String,
    pub udf: String,
    pub source: String,
    pub value_type: ValueType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectItem {
    pub expr: Expr,
    pub name: String,
    pub value_type: ValueType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogicalPlan {
    Scan {
        table: String,
        alias: String,
        fields: Vec<Field>,
        filter: Option<Expr>,
    },
    SchemaMap {
        input: Box<LogicalPlan>,
        derive: Vec<DerivedColumn>,
    },
    Select {
        input: Box<LogicalPlan>,
        predicate: Expr,
    },
    Project {
        input: Box<LogicalPlan>,
        items: Vec<ProjectItem>,
    },
    /// Unoptimized inner equi-join.
    Join {
        left: Box<LogicalPlan>,
        right: Box<LogicalPlan>,
        left_key: String,
        right_key: String,
    },
    HashJoinPartition {
        input: Box<LogicalPlan>,
        key: String,
    },
    HashJoinProbe {
        build: Box<LogicalPlan>,
        probe: Box<LogicalPlan>,
        build_key: String,
        probe_key: String,
    },
}

/// Output schema of a join: build fields, then probe fields minus the probe
/// key (its values equal the build key).
pub fn join_schema(build: &Schema, probe: &Schema, probe_key: &str) -> Schema {
    let mut fields = build.fields.clone();
    fields.extend(probe.fields.iter().filter(|f| f.name != probe_key).cloned());
    Schema::new(fields)
}

impl LogicalPlan {
    pub fn children(&self) -> Vec<&LogicalPlan> {
        match self {
            LogicalPlan::Scan { .. } => vec![],
            LogicalPlan::SchemaMap { input, .. }
            | LogicalPlan::Select { input, .. }
            | LogicalPlan::Project { input, .. }
            | LogicalPlan::HashJoinPartition { input, .. } => vec![input],
            LogicalPlan::Join { left, right, .. } => vec![left, right],
            LogicalPlan::HashJoinProbe { build, probe, .. } => vec![build, probe],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LogicalPlan::Scan { .. } => "Scan",
            LogicalPlan::SchemaMap { .. } => "SchemaMap",
            LogicalPlan::Select { .. } => "Select",
            LogicalPlan::Project { .. } => "Project",
            LogicalPlan::Join { .. } => "Join",
            LogicalPlan::HashJoinPartition { .. } => "HashJoinPartition",
            LogicalPlan::HashJoinProbe { .. } => "HashJoinProbe",
        }
    }

    /// Output schema, derived structurally (no catalog checks).
    pub fn schema(&self) -> Schema {
        match self {
            LogicalPlan::Scan { fields, .. } => Schema::new(fields.clone()),
            LogicalPlan::SchemaMap { input, derive } => {
                let mut s = input.schema();
                s.fields
                    .extend(derive.iter().map(|d| Field::new(&d.name, d.value_type)));
                s
            }
            LogicalPlan::Select { input, .. } | LogicalPlan::HashJoinPartition { input, .. } => {
                input.schema()
            }
            LogicalPlan::Project { items, .. } => Schema::new(
                items
                    .iter()
                    .map(|i| Field::new(&i.name, i.value_type))
                    .collect(),
            ),
            LogicalPlan::Join {
                left,
                right,
                right_key,
                ..
            } => join_schema(&left.schema(), &right.schema(), right_key),
            LogicalPlan::HashJoinProbe {
                build,
                probe,
                probe_key,
                ..
            } => join_schema(&build.schema(), &probe.schema(), probe_key),
        }
    }

    /// Tables scanned under this node, left to right.
    pub fn scans(&self) -> Vec<(&str, &str)> {
        match self {
            LogicalPlan::Scan { table, alias, .. } => vec![(table.as_str(), alias.as_str())],
            other => other
                .children()
                .into_iter()
                .flat_map(|c| c.scans())
                .collect(),
        }
    }

    /// Every `(derived column, udf)` pair computed by schema maps below here.
    pub fn derived_columns(&self) -> Vec<&DerivedColumn> {
        let mut out: Vec<&DerivedColumn> = self
            .children()
            .into_iter()
            .flat_map(|c| c.derived_columns())
            .collect();
        if let LogicalPlan::SchemaMap { derive, .. } = self {
            out.extend(derive.iter());
        }
        out
    }

    /// Indented one-node-per-line rendering, root first.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        self.pretty_into(0, &mut out);
        out
    }

    fn pretty_into(&self, depth: usize, out: &mut String) {
        out.push_str(&"  ".repeat(depth));
        out.push_str(&self.to_string());
        out.push('\n');
        for c in self.children() {
            c.pretty_into(depth + 1, out);
        }
    }
}

impl fmt::Display for LogicalPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogicalPlan::Scan {
                table,
                alias,
                filter,
                ..
            } => {
                write!(f, "Scan({table} as {alias}")?;
                if let Some(p) = filter {
                    write!(f, ", filter={p}")?;
                }
                f.write_str(")")
            }
            LogicalPlan::SchemaMap { derive, .. } => {
                let parts: Vec<String> = derive
                    .iter()
                    .map(|d| format!("{}={}({})", d.name, d.udf, d.source))
                    .collect();
                write!(f, "SchemaMap({})", parts.join(", "))
            }
            LogicalPlan::Select { predicate, .. } => write!(f, "Select({predicate})"),
            LogicalPlan::Project { items, .. } => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| {
                        let e = i.expr.to_string();
                        if e == i.name {
                            e
                        } else {
                            format!("{e} as {}", i.name)
                        }
                    })
                    .collect();
                write!(f, "Project({})", parts.join(", "))
            }
            LogicalPlan::Join {
                left_key,
                right_key,
                ..
            } => write!(f, "Join({left_key} = {right_key})"),
            LogicalPlan::HashJoinPartition { key, .. } => write!(f, "HashJoinPartition({key})"),
            LogicalPlan::HashJoinProbe {
                build_key,
                probe_key,
                ..
            } => write!(f, "HashJoinProbe({build_key} = {probe_key})"),
        }
    }
}

/// One FROM/JOIN table during binding.
struct Binding {
    alias: String,
    def: VirtualTableDef,
    /// Derived columns referenced by the query, by column name.
    needed: BTreeSet<String>,
}

struct Binder<'a> {
    catalog: &'a Catalog,
    tables: Vec<Binding>,
}

impl Binder<'_> {
    fn bind_table(&self, t: &TableRef) -> Result<Binding> {
        let def = self
            .catalog
            .table(&t.name)
            .ok_or_else(|| Error::UnknownTable(t.name.clone()))?;
        Ok(Binding {
            alias: t.binding().to_string(),
            def,
            needed: BTreeSet::new(),
        })
    }

    /// Resolves a column reference to `(table index, column)`.
    fn resolve(&self, c: &ColRef) -> Result<(usize, ColumnDef)> {
        match &c.qualifier {
            Some(q) => {
                let ti = self
                    .tables
                    .iter()
                    .position(|b| &b.alias == q)
                    .or_else(|| {
                        // Allow the bare table name when it is unambiguous.
                        let hits: Vec<usize> = self
                            .tables
                            .iter()
                            .enumerate()
                            .filter(|(_, b)| &b.def.name == q)
                            .map(|(i, _)| i)
                            .collect();
                        (hits.len() == 1).then(|| hits[0])
                    })
                    .ok_or_else(|| Error::UnknownTable(q.clone()))?;
                let col = self.tables[ti]
                    .def
                    .column(&c.name)
                    .ok_or_else(|| Error::UnknownColumn(c.to_string()))?;
                Ok((ti, col.clone()))
            }
            None => {
                let hits: Vec<(usize, ColumnDef)> = self
                    .tables
                    .iter()
                    .enumerate()
                    .filter_map(|(i, b)| b.def.column(&c.name).map(|col| (i, col.clone())))
                    .collect();
                match hits.len() {
                    0 => Err(Error::UnknownColumn(c.name.clone())),
                    1 => Ok(hits.into_iter().next().expect("one hit")),
                    _ => Err(Error::AmbiguousColumn(c.name.clone())),
                }
            }
        }
    }

    fn column_expr(&mut self, ti: usize, col: &ColumnDef) -> Expr {
        let b = &mut self.tables[ti];
        if !col.is_materialized() {
            b.needed.insert(col.name.clone());
        }
        Expr::Column(format!("{}.{}", b.alias, col.name))
    }

    /// Binds an expression. The second value is the display name a bare
    /// select item would get.
    fn bind_expr(&mut self, e: &SqlExpr) -> Result<(Expr, String)> {
        match e {
            SqlExpr::Column(c) => {
                let (ti, col) = self.resolve(c)?;
                Ok((self.column_expr(ti, &col), col.name))
            }
            SqlExpr::Literal(v) => Ok((Expr::Literal(v.clone()), v.to_string())),
            SqlExpr::Call { name, args, .. } => {
                // f(t.col) names t's column derived by f, when one exists.
                if let [SqlExpr::Column(c)] = args.as_slice() {
                    if let Ok((ti, _)) = self.resolve(c) {
                        if let Some(col) = self.tables[ti].def.column_derived_by(name).cloned() {
                            let expr = self.column_expr(ti, &col);
                            return Ok((expr, col.name));
                        }
                    }
                }
                if self.catalog.udf(name).is_none() {
                    return Err(Error::UnknownUdf(name.clone()));
                }
                let args = args
                    .iter()
                    .map(|a| self.bind_expr(a).map(|(e, _)| e))
                    .collect::<Result<Vec<_>>>()?;
                Ok((
                    Expr::Udf {
                        name: name.clone(),
                        args,
                    },
                    name.clone(),
                ))
            }
            SqlExpr::Compare { op, left, right } => {
                let (l, ln) = self.bind_expr(left)?;
                let (r, rn) = self.bind_expr(right)?;
                Ok((Expr::cmp(*op, l, r), format!("{ln}{}{rn}", op.symbol())))
            }
        }
    }

    fn scan_side(&self, ti: usize) -> Result<LogicalPlan> {
        let b = &self.tables[ti];
        let fields = b
            .def
            .materialized_columns()
            .map(|c| Field::new(format!("{}.{}", b.alias, c.name), c.value_type))
            .collect();
        let scan = LogicalPlan::Scan {
            table: b.def.name.clone(),
            alias: b.alias.clone(),
            fields,
            filter: None,
        };
        let mut derive = Vec::new();
        for col in &b.def.columns {
            if !b.needed.contains(&col.name) {
                continue;
            }
            let udf_name = col.udf_name().expect("needed columns are udf-derived");
            let udf = self
                .catalog
                .udf(udf_name)
                .ok_or_else(|| Error::UnknownUdf(udf_name.to_string()))?;
            let src = b.def.derived_source(&udf).ok_or_else(|| {
                Error::TypeMismatch(format!("{}: no source column for {udf_name}", col.name))
            })?;
            derive.push(DerivedColumn {
                name: format!("{}.{}", b.alias, col.name),
                udf: udf_name.to_string(),
                source: format!("{}.{}", b.alias, src.name),
                value_type: col.value_type,
            });
        }
        Ok(if derive.is_empty() {
            scan
        } else {
            LogicalPlan::SchemaMap {
                input: Box::new(scan),
                derive,
            }
        })
    }
}

/// Builds the unoptimized plan:
/// `Scan -> SchemaMap -> [Join] -> Select -> Project`.
pub fn build_logical(q: &SqlQuery, catalog: &Catalog) -> Result<LogicalPlan> {
    let mut binder = Binder {
        catalog,
        tables: Vec::new(),
    };
    let from = binder.bind_table(&q.from)?;
    binder.tables.push(from);
    if let Some(j) = &q.join {
        let t = binder.bind_table(&j.table)?;
        if t.alias == binder.tables[0].alias {
            return Err(Error::Unsupported(format!(
                "table alias {} used twice",
                t.alias
            )));
        }
        binder.tables.push(t);
    }

    // Join keys, oriented so the left key belongs to the FROM table.
    let mut keys = None;
    if let Some(j) = &q.join {
        let (lt, lc) = binder.resolve(&j.left)?;
        let (rt, rc) = binder.resolve(&j.right)?;
        let (l, r) = match (lt, rt) {
            (0, 1) => ((0, lc), (1, rc)),
            (1, 0) => ((0, rc), (1, lc)),
            _ => {
                return Err(Error::Unsupported(
                    "join condition must compare one column from each table".into(),
                ))
            }
        };
        let lk = binder.column_expr(l.0, &l.1);
        let rk = binder.column_expr(r.0, &r.1);
        let (Expr::Column(lk), Expr::Column(rk)) = (lk, rk) else {
            unreachable!("column_expr returns a column")
        };
        keys = Some((lk, rk));
    }

    let mut items = Vec::new();
    match &q.select {
        SelectList::Star => {
            for ti in 0..binder.tables.len() {
                let cols = binder.tables[ti].def.columns.clone();
                for col in &cols {
                    let e = binder.column_expr(ti, col);
                    items.push((e, col.name.clone(), Some(ti), false));
                }
            }
        }
        SelectList::Items(list) => {
            for item in list {
                let (e, default) = binder.bind_expr(&item.expr)?;
                let owner = match &e {
                    Expr::Column(c) => binder
                        .tables
                        .iter()
                        .position(|b| c.starts_with(&format!("{}.", b.alias))),
                    _ => None,
                };
                let explicit = item.alias.is_some();
                items.push((e, item.alias.clone().unwrap_or(default), owner, explicit));
            }
        }
    }
    let filters = q
        .filters
        .iter()
        .map(|f| binder.bind_expr(f).map(|(e, _)| e))
        .collect::<Result<Vec<_>>>()?;

    let mut plan = binder.scan_side(0)?;
    if let Some((lk, rk)) = &keys {
        let right = binder.scan_side(1)?;
        plan = LogicalPlan::Join {
            left: Box::new(plan),
            right: Box::new(right),
            left_key: lk.clone(),
            right_key: rk.clone(),
        };
    }
    // The join drops the right key column; its values equal the left key.
    let fix = |e: Expr| match &keys {
        Some((lk, rk)) => e.rename_column(rk, lk),
        None => e,
    };
    if let Some(pred) = Expr::conjunction(filters.into_iter().map(fix).collect()) {
        plan = LogicalPlan::Select {
            input: Box::new(plan),
            predicate: pred,
        };
    }

    // Colliding display names get the alias prefix.
    let mut names: Vec<String> = items.iter().map(|i| i.1.clone()).collect();
    for (i, (_, name, owner, explicit)) in items.iter().enumerate() {
        let dup = items
            .iter()
            .enumerate()
            .any(|(j, other)| j != i && &other.1 == name);
        if dup && !explicit {
            if let Some(ti) = owner {
                names[i] = format!("{}.{}", binder.tables[*ti].alias, name);
            }
        }
    }
    let mut seen = BTreeSet::new();
    for n in &names {
        if !seen.insert(n.as_str()) {
            return Err(Error::AmbiguousColumn(n.clone()));
        }
    }

    let schema = plan.schema();
    let mut project = Vec::new();
    for ((e, ..), name) in items.into_iter().zip(names) {
        let expr = fix(e);
        let value_type = expr.value_type(&schema, catalog)?;
        project.push(ProjectItem {
            expr,
            name,
            value_type,
        });
    }
    Ok(LogicalPlan::Project {
        input: Box::new(plan),
        items: project,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::sql::parse_sql;
    use crate::storage::{generate_demo_data, DataLake, DemoSpec};
    use crate::udf::builtin_udfs;

    fn demo() -> (tempfile::TempDir, Catalog) {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("lake");
        let defs = generate_demo_data(&root, &DemoSpec::with_rows(40), 7).unwrap();
        let lake = DataLake::new(&root);
        let c = Catalog::new();
        for u in builtin_udfs() {
            c.register_udf(u).unwrap();
        }
        for d in defs {
            c.register_table(d, &lake).unwrap();
        }
        (dir, c)
    }

    fn bind(c: &Catalog, sql: &str) -> Result<LogicalPlan> {
        build_logical(&parse_sql(sql)?, c)
    }

    #[test]
    fn udf_call_on_derived_table_becomes_column() {
        let (_d, c) = demo();
        let p = bind(&c, "select a.id, hasBangs(a.id) from celeba_s as a").unwrap();
        assert_eq!(
            p.pretty(),
            "Project(a.id as id, a.bangs as bangs)\n  \
             SchemaMap(a.bangs=hasBangs(a.image))\n    Scan(celeba_s as a)\n"
        );
        c.validate_query(&p).unwrap();
    }

    #[test]
    fn join_rewrites_right_key_and_prefixes_collisions() {
        let (_d, c) = demo();
        let p = bind(
            &c,
            "select a.id, b.id, b.address from celeba_s as a inner join customer_s as b \
             on (b.id = a.id) where b.id > 20",
        )
        .unwrap();
        let LogicalPlan::Project { input, items } = &p else {
            panic!()
        };
        assert_eq!(items[0].name, "a.id");
        assert_eq!(items[1].name, "b.id");
        assert_eq!(items[1].expr, Expr::col("a.id"));
        let LogicalPlan::Select { predicate, input } = &**input else {
            panic!()
        };
        assert_eq!(predicate.to_string(), "a.id > 20");
        assert!(matches!(&**input, LogicalPlan::Join { left_key, .. } if left_key == "a.id"));
        c.validate_query(&p).unwrap();
    }

    #[test]
    fn resolution_errors() {
        let (_d, c) = demo();
        assert!(matches!(
            bind(&c, "select x from nope"),
            Err(Error::UnknownTable(_))
        ));
        assert!(matches!(
            bind(&c, "select zz from celeba_s"),
            Err(Error::UnknownColumn(_))
        ));
        assert!(matches!(
            bind(
                &c,
                "select id from celeba_s as a join customer_s as b on a.id = b.id"
            ),
            Err(Error::AmbiguousColumn(_))
        ));
        assert!(matches!(
            bind(&c, "select nothing(id) from customer_s"),
            Err(Error::UnknownUdf(_))
        ));
        assert!(matches!(
            bind(&c, "select to_upper(id) from customer_s"),
            Err(Error::TypeMismatch(_))
        ));
    }

    #[test]
    fn star_expands_all_columns_in_catalog_order() {
        let (_d, c) = demo();
        let p = bind(&c, "select * from celeba_s as a").unwrap();
        let names: Vec<String> = p.schema().fields.into_iter().map(|f| f.name).collect();
        assert_eq!(names, ["image", "id", "eyeglasses", "bangs"]);
    }
}
