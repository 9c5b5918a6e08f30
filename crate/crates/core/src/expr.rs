//! Scalar expressions over bound (fully qualified) column names.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::types::{Row, Schema, Value, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
        }
    }

    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Gt => ord == Greater,
            CmpOp::Lt => ord == Less,
            CmpOp::Ge => ord != Less,
            CmpOp::Le => ord != Greater,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Column(String),
    Literal(Value),
    Udf {
        name: String,
        args: Vec<Expr>,
    },
    Compare {
        op: CmpOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    And(Box<Expr>, Box<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(c) => f.write_str(c),
            Expr::Literal(Value::String(s)) => write!(f, "'{s}'"),
            Expr::Literal(v) => write!(f, "{v}"),
            Expr::Udf { name, args } => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Compare { op, left, right } => write!(f, "{left} {} {right}", op.symbol()),
            Expr::And(a, b) => write!(f, "{a} AND {b}"),
        }
    }
}

/// Evaluates UDF calls on behalf of [`Expr::eval`].
pub trait UdfEvaluator {
    fn call(&mut self, name: &str, args: &[Value]) -> Result<Value>;
}

impl Expr {
    pub fn col(name: impl Into<String>) -> Expr {
        Expr::Column(name.into())
    }

    pub fn lit(v: Value) -> Expr {
        Expr::Literal(v)
    }

    pub fn cmp(op: CmpOp, left: Expr, right: Expr) -> Expr {
        Expr::Compare {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Joins predicates with AND; `None` when the list is empty.
    pub fn conjunction(mut preds: Vec<Expr>) -> Option<Expr> {
        let first = if preds.is_empty() {
            return None;
        } else {
            preds.remove(0)
        };
        Some(
            preds
                .into_iter()
                .fold(first, |acc, p| Expr::And(Box::new(acc), Box::new(p))),
        )
    }

    /// Splits a tree of ANDs into its conjuncts, left to right.
    pub fn conjuncts(&self) -> Vec<Expr> {
        match self {
            Expr::And(a, b) => {
                let mut v = a.conjuncts();
                v.extend(b.conjuncts());
                v
            }
            other => vec![other.clone()],
        }
    }

    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Column(c) = e {
                out.push(c.as_str());
            }
        });
        out
    }

    pub fn udf_calls(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Udf { name, .. } = e {
                out.push(name.as_str());
            }
        });
        out
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Column(_) | Expr::Literal(_) => {}
            Expr::Udf { args, .. } => args.iter().for_each(|a| a.visit(f)),
            Expr::Compare { left, right, .. } => {
                left.visit(f);
                right.visit(f);
            }
            Expr::And(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Replaces every reference to column `from` with `to`.
    pub fn rename_column(&self, from: &str, to: &str) -> Expr {
        match self {
            Expr::Column(c) if c == from => Expr::Column(to.to_string()),
            Expr::Column(_) | Expr::Literal(_) => self.clone(),
            Expr::Udf { name, args } => Expr::Udf {
                name: name.clone(),
                args: args.iter().map(|a| a.rename_column(from, to)).collect(),
            },
            Expr::Compare { op, left, right } => Expr::Compare {
                op: *op,
                left: Box::new(left.rename_column(from, to)),
                right: Box::new(right.rename_column(from, to)),
            },
            Expr::And(a, b) => Expr::And(
                Box::new(a.rename_column(from, to)),
                Box::new(b.rename_column(from, to)),
            ),
        }
    }

    /// Static type of the expression against `schema`.
    pub fn value_type(&self, schema: &Schema, catalog: &Catalog) -> Result<ValueType> {
        match self {
            Expr::Column(c) => schema
                .field(c)
                .map(|f| f.value_type)
                .ok_or_else(|| Error::UnknownColumn(c.clone())),
            Expr::Literal(v) => Ok(v.value_type()),
            Expr::Udf { name, args } => {
                let udf = catalog
                    .udf(name)
                    .ok_or_else(|| Error::UnknownUdf(name.clone()))?;
                let arg_types = args
                    .iter()
                    .map(|a| a.value_type(schema, catalog))
                    .collect::<Result<Vec<_>>>()?;
                if arg_types != udf.input_types {
                    return Err(Error::TypeMismatch(format!(
                        "{name} expects ({}), got ({})",
                        join_types(&udf.input_types),
                        join_types(&arg_types)
                    )));
                }
                Ok(udf.output_type)
            }
            Expr::Compare { op, left, right } => {
                let l = left.value_type(schema, catalog)?;
                let r = right.value_type(schema, catalog)?;
                if !comparable(l, r) {
                    return Err(Error::TypeMismatch(format!(
                        "cannot compare {l} {} {r} in {self}",
                        op.symbol()
                    )));
                }
                Ok(ValueType::Bool)
            }
            Expr::And(a, b) => {
                for side in [a, b] {
                    let t = side.value_type(schema, catalog)?;
                    if t != ValueType::Bool {
                        return Err(Error::TypeMismatch(format!("AND operand {side} is {t}")));
                    }
                }
                Ok(ValueType::Bool)
            }
        }
    }

    pub fn eval(&self, schema: &Schema, row: &Row, udfs: &mut dyn UdfEvaluator) -> Result<Value> {
        match self {
            Expr::Column(c) => schema
                .index_of(c)
                .map(|i| row[i].clone())
                .ok_or_else(|| Error::UnknownColumn(c.clone())),
            Expr::Literal(v) => Ok(v.clone()),
            Expr::Udf { name, args } => {
                let vals = args
                    .iter()
                    .map(|a| a.eval(schema, row, udfs))
                    .collect::<Result<Vec<_>>>()?;
                udfs.call(name, &vals)
            }
            Expr::Compare { op, left, right } => {
                let l = left.eval(schema, row, udfs)?;
                let r = right.eval(schema, row, udfs)?;
                let ord = compare_values(&l, &r).ok_or_else(|| {
                    Error::TypeMismatch(format!("cannot compare {l:?} with {r:?}"))
                })?;
                Ok(Value::Bool(op.holds(ord)))
            }
            Expr::And(a, b) => {
                // Short-circuit: the right side (possibly an expensive UDF) is
                // skipped when the left side is false.
                if !truthy(&a.eval(schema, row, udfs)?)? {
                    return Ok(Value::Bool(false));
                }
                Ok(Value::Bool(truthy(&b.eval(schema, row, udfs)?)?))
            }
        }
    }

    pub fn eval_predicate(
        &self,
        schema: &Schema,
        row: &Row,
        udfs: &mut dyn UdfEvaluator,
    ) -> Result<bool> {
        truthy(&self.eval(schema, row, udfs)?)
    }
}

fn truthy(v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::TypeMismatch(format!("predicate produced {v:?}, expected bool")))
}

fn join_types(ts: &[ValueType]) -> String {
    ts.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")
}

pub fn comparable(l: ValueType, r: ValueType) -> bool {
    l == r || (l.is_numeric() && r.is_numeric())
}

pub fn compare_values(l: &Value, r: &Value) -> Option<std::cmp::Ordering> {
    match (l, r) {
        (Value::Int64(a), Value::Int64(b)) => Some(a.cmp(b)),
        (Value::String(a), Value::String(b)) | (Value::BlobRef(a), Value::BlobRef(b)) => {
            Some(a.cmp(b))
        }
        (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
        _ => {
            let (a, b) = (l.as_f64()?, r.as_f64()?);
            a.partial_cmp(&b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Field;

    struct NoUdfs;
    impl UdfEvaluator for NoUdfs {
        fn call(&mut self, name: &str, _: &[Value]) -> Result<Value> {
            Err(Error::UdfNotRegistered(name.into()))
        }
    }

    #[test]
    fn mixed_numeric_comparison() {
        let schema = Schema::new(vec![Field::new("a.x", ValueType::Int64)]);
        let e = Expr::cmp(CmpOp::Gt, Expr::col("a.x"), Expr::lit(Value::Float64(20.5)));
        assert!(e
            .eval_predicate(&schema, &vec![Value::Int64(21)], &mut NoUdfs)
            .unwrap());
        assert!(!e
            .eval_predicate(&schema, &vec![Value::Int64(20)], &mut NoUdfs)
            .unwrap());
    }

    #[test]
    fn and_short_circuits() {
        let schema = Schema::new(vec![Field::new("a.b", ValueType::Bool)]);
        let e = Expr::And(
            Box::new(Expr::col("a.b")),
            Box::new(Expr::Udf {
                name: "boom".into(),
                args: vec![],
            }),
        );
        assert!(!e
            .eval_predicate(&schema, &vec![Value::Bool(false)], &mut NoUdfs)
            .unwrap());
        assert!(e
            .eval_predicate(&schema, &vec![Value::Bool(true)], &mut NoUdfs)
            .is_err());
    }

    #[test]
    fn conjunct_round_trip() {
        let ps = vec![Expr::col("a"), Expr::col("b"), Expr::col("c")];
        let e = Expr::conjunction(ps.clone()).unwrap();
        assert_eq!(e.conjuncts(), ps);
        assert_eq!(e.to_string(), "a AND b AND c");
        assert!(Expr::conjunction(vec![]).is_none());
    }
}
