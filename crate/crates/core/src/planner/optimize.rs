//! Rule-based rewrites over the unoptimized plan.
//!
//! * Non-UDF conjuncts touching a single table are pushed into its scan.
//! * UDF conjuncts become selects on their own side, cheapest first, each
//!   directly above the schema map that derives the columns it reads.
//! * Inner joins become a hash partition on each side plus a probe; the
//!   side with the smaller row estimate builds (ties keep the left table).

use std::collections::BTreeSet;

use super::logical::{DerivedColumn, LogicalPlan, ProjectItem};
use crate::catalog::Catalog;
use crate::expr::Expr;
use crate::types::Field;

/// A single-table chain `Scan -> (SchemaMap | Select | HashJoinPartition)*`
/// flattened into its parts.
struct Side {
    table: String,
    alias: String,
    fields: Vec<Field>,
    conjuncts: Vec<Expr>,
    derived: Vec<DerivedColumn>,
}

impl Side {
    fn decompose(plan: &LogicalPlan) -> Option<Side> {
        match plan {
            LogicalPlan::Scan {
                table,
                alias,
                fields,
                filter,
            } => Some(Side {
                table: table.clone(),
                alias: alias.clone(),
                fields: fields.clone(),
                conjuncts: filter.as_ref().map(|f| f.conjuncts()).unwrap_or_default(),
                derived: Vec::new(),
            }),
            LogicalPlan::SchemaMap { input, derive } => {
                let mut s = Side::decompose(input)?;
                s.derived.extend(derive.iter().cloned());
                Some(s)
            }
            LogicalPlan::Select { input, predicate } => {
                let mut s = Side::decompose(input)?;
                s.conjuncts.extend(predicate.conjuncts());
                Some(s)
            }
            LogicalPlan::HashJoinPartition { input, .. } => Side::decompose(input),
            _ => None,
        }
    }

    fn owns(&self, column: &str) -> bool {
        self.fields.iter().any(|f| f.name == column)
            || self.derived.iter().any(|d| d.name == column)
    }

    fn owns_all(&self, e: &Expr) -> bool {
        e.columns().iter().all(|c| self.owns(c))
    }

    fn rebuild(self, catalog: &Catalog) -> LogicalPlan {
        let derived_names: BTreeSet<&str> = self.derived.iter().map(|d| d.name.as_str()).collect();
        let (plain, mut udf_conjs): (Vec<Expr>, Vec<Expr>) =
            self.conjuncts.iter().cloned().partition(|c| {
                c.udf_calls().is_empty()
                    && !c.columns().iter().any(|col| derived_names.contains(col))
            });
        udf_conjs.sort_by(|a, b| {
            let (ca, cb) = (
                conjunct_cost(a, &self.derived, catalog),
                conjunct_cost(b, &self.derived, catalog),
            );
            ca.total_cmp(&cb)
        });

        let mut plan = LogicalPlan::Scan {
            table: self.table,
            alias: self.alias,
            fields: self.fields,
            filter: Expr::conjunction(plain),
        };
        let mut done: BTreeSet<String> = BTreeSet::new();
        for c in udf_conjs {
            let cols: BTreeSet<&str> = c.columns().into_iter().collect();
            let need: Vec<DerivedColumn> = self
                .derived
                .iter()
                .filter(|d| cols.contains(d.name.as_str()) && !done.contains(&d.name))
                .cloned()
                .collect();
            if !need.is_empty() {
                done.extend(need.iter().map(|d| d.name.clone()));
                plan = LogicalPlan::SchemaMap {
                    input: Box::new(plan),
                    derive: need,
                };
            }
            plan = LogicalPlan::Select {
                input: Box::new(plan),
                predicate: c,
            };
        }
        let rest: Vec<DerivedColumn> = self
            .derived
            .into_iter()
            .filter(|d| !done.contains(&d.name))
            .collect();
        if !rest.is_empty() {
            plan = LogicalPlan::SchemaMap {
                input: Box::new(plan),
                derive: rest,
            };
        }
        plan
    }
}

/// Virtual CPU cost of evaluating one conjunct per row: the UDFs it calls
/// directly plus the UDFs behind any derived columns it reads.
fn conjunct_cost(e: &Expr, derived: &[DerivedColumn], catalog: &Catalog) -> f64 {
    let mut udfs: BTreeSet<&str> = e.udf_calls().into_iter().collect();
    for c in e.columns() {
        if let Some(d) = derived.iter().find(|d| d.name == c) {
            udfs.insert(&d.udf);
        }
    }
    udfs.iter()
        .filter_map(|u| catalog.udf(u))
        .map(|u| u.cpu_cost_per_item)
        .sum()
}

fn is_udf_free(e: &Expr, derived: &[&DerivedColumn]) -> bool {
    e.udf_calls().is_empty()
        && !e
            .columns()
            .iter()
            .any(|c| derived.iter().any(|d| &d.name == c))
}

/// Returns the optimized plan. Shapes the rules do not recognise are
/// returned unchanged.
pub fn optimize(plan: &LogicalPlan, catalog: &Catalog) -> LogicalPlan {
    match plan {
        LogicalPlan::Project { input, items } => match optimize_body(input, catalog) {
            Some((body, rename)) => LogicalPlan::Project {
                input: Box::new(body),
                items: items
                    .iter()
                    .map(|i| ProjectItem {
                        expr: match &rename {
                            Some((from, to)) => i.expr.rename_column(from, to),
                            None => i.expr.clone(),
                        },
                        name: i.name.clone(),
                        value_type: i.value_type,
                    })
                    .collect(),
            },
            None => plan.clone(),
        },
        other => match optimize_body(other, catalog) {
            Some((body, None)) => body,
            _ => plan.clone(),
        },
    }
}

/// Optimizes everything below the projection. The second value is a column
/// rename `(from, to)` that expressions above must apply when the join now
/// drops a different key column.
fn optimize_body(
    plan: &LogicalPlan,
    catalog: &Catalog,
) -> Option<(LogicalPlan, Option<(String, String)>)> {
    let mut above = Vec::new();
    let mut node = plan;
    while let LogicalPlan::Select { input, predicate } = node {
        above.splice(0..0, predicate.conjuncts());
        node = input;
    }
    let (left, right, lk, rk) = match node {
        LogicalPlan::Join {
            left,
            right,
            left_key,
            right_key,
        } => (left, right, left_key, right_key),
        LogicalPlan::HashJoinProbe {
            build,
            probe,
            build_key,
            probe_key,
        } => (build, probe, build_key, probe_key),
        _ => {
            let side = Side::decompose(plan)?;
            return Some((side.rebuild(catalog), None));
        }
    };
    let mut ls = Side::decompose(left)?;
    let mut rs = Side::decompose(right)?;

    let mut cross = Vec::new();
    for c in above {
        let all_derived: Vec<&DerivedColumn> = ls.derived.iter().chain(&rs.derived).collect();
        let key_only = !c.columns().is_empty()
            && c.columns().iter().all(|col| col == lk)
            && is_udf_free(&c, &all_derived);
        if key_only {
            // Equal keys: the same filter applies to both inputs.
            rs.conjuncts.push(c.rename_column(lk, rk));
            ls.conjuncts.push(c);
        } else if ls.owns_all(&c) {
            ls.conjuncts.push(c);
        } else if rs.owns_all(&c) {
            rs.conjuncts.push(c);
        } else {
            cross.push(c);
        }
    }

    let rows = |s: &Side| {
        catalog
            .table(&s.table)
            .map(|t| t.row_count_estimate)
            .unwrap_or(u64::MAX)
    };
    let swap = rows(&rs) < rows(&ls);
    let all_derived: Vec<DerivedColumn> = ls.derived.iter().chain(&rs.derived).cloned().collect();
    let (build, probe, bk, pk, rename) = if swap {
        (
            rs,
            ls,
            rk.clone(),
            lk.clone(),
            Some((lk.clone(), rk.clone())),
        )
    } else {
        (ls, rs, lk.clone(), rk.clone(), None)
    };
    let mut out = LogicalPlan::HashJoinProbe {
        build: Box::new(LogicalPlan::HashJoinPartition {
            input: Box::new(build.rebuild(catalog)),
            key: bk.clone(),
        }),
        probe: Box::new(LogicalPlan::HashJoinPartition {
            input: Box::new(probe.rebuild(catalog)),
            key: pk.clone(),
        }),
        build_key: bk,
        probe_key: pk,
    };

    let cross: Vec<Expr> = cross
        .into_iter()
        .map(|c| match &rename {
            Some((from, to)) => c.rename_column(from, to),
            None => c,
        })
        .collect();
    let refs: Vec<&DerivedColumn> = all_derived.iter().collect();
    let (plain, mut udf_conjs): (Vec<Expr>, Vec<Expr>) =
        cross.into_iter().partition(|c| is_udf_free(c, &refs));
    udf_conjs.sort_by(|a, b| {
        conjunct_cost(a, &all_derived, catalog).total_cmp(&conjunct_cost(b, &all_derived, catalog))
    });
    for c in plain.into_iter().chain(udf_conjs) {
        out = LogicalPlan::Select {
            input: Box::new(out),
            predicate: c,
        };
    }
    Some((out, rename))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::logical::build_logical;
    use crate::planner::sql::parse_sql;
    use crate::storage::{generate_demo_data, DataLake, DemoSpec};
    use crate::udf::builtin_udfs;

    fn demo() -> (tempfile::TempDir, Catalog) {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("lake");
        let mut spec = DemoSpec::with_rows(40);
        spec.tables[2].rows = 30;
        let defs = generate_demo_data(&root, &spec, 3).unwrap();
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

    fn opt(c: &Catalog, sql: &str) -> LogicalPlan {
        let p = build_logical(&parse_sql(sql).unwrap(), c).unwrap();
        let o = optimize(&p, c);
        c.validate_query(&o).unwrap();
        o
    }

    #[test]
    fn udf_predicates_ordered_by_cost_and_interleaved() {
        let (_d, c) = demo();
        let o = opt(
            &c,
            "select id, isometric from pubchem_s where exact_mass(smile) > 200 \
             and to_upper(smile) = 'C' and id > 3",
        );
        assert_eq!(
            o.pretty(),
            "Project(p.id as id, p.isometric as isometric)\n".replace("p.", "pubchem_s.")
                + "  Select(exact_mass(pubchem_s.smile) > 200)\n"
                + "    Select(to_upper(pubchem_s.smile) = 'C')\n"
                + "      Scan(pubchem_s as pubchem_s, filter=pubchem_s.id > 3)\n"
        );
    }

    #[test]
    fn derived_columns_materialize_next_to_their_select() {
        let (_d, c) = demo();
        let o = opt(
            &c,
            "select * from celeba_s as a where hasEyeglasses(a.id) and hasBangs(a.id)",
        );
        let text = o.pretty();
        let lines: Vec<&str> = text.lines().map(str::trim).collect();
        assert_eq!(
            &lines[1..],
            [
                "Select(a.bangs)",
                "SchemaMap(a.bangs=hasBangs(a.image))",
                "Select(a.eyeglasses)",
                "SchemaMap(a.eyeglasses=hasEyeglasses(a.image))",
                "Scan(celeba_s as a)",
            ]
        );
    }

    #[test]
    fn join_picks_smaller_build_side_and_pushes_key_filters() {
        let (_d, c) = demo();
        let o = opt(
            &c,
            "select a.id, b.address, hasEyeglasses(a.id) from celeba_s as a inner join \
             customer_s as b on (a.id = b.id) where b.id > 20 and hasEyeglasses(a.id)",
        );
        let text = o.pretty();
        let lines: Vec<&str> = text.lines().map(str::trim).collect();
        assert_eq!(
            lines,
            [
                "Project(b.id as id, b.address as address, a.eyeglasses as eyeglasses)",
                "HashJoinProbe(b.id = a.id)",
                "HashJoinPartition(b.id)",
                "Scan(customer_s as b, filter=b.id > 20)",
                "HashJoinPartition(a.id)",
                "Select(a.eyeglasses)",
                "SchemaMap(a.eyeglasses=hasEyeglasses(a.image))",
                "Scan(celeba_s as a, filter=a.id > 20)",
            ]
        );
    }

    #[test]
    fn no_predicates_keeps_shape_and_is_idempotent() {
        let (_d, c) = demo();
        let p = build_logical(
            &parse_sql("select a.id, hasBangs(a.id) from celeba_s as a").unwrap(),
            &c,
        )
        .unwrap();
        let o = optimize(&p, &c);
        assert_eq!(o, p);
        let q = opt(&c, "select * from celeba_s as a inner join customer_s as b on a.id = b.id where hasBangs(a.id) and a.id > 5");
        assert_eq!(optimize(&q, &c), q);
    }
}
