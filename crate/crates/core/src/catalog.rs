//! Metadata for virtual tables, their columns, and registered UDFs.
//!
//! Virtual tables are realized at read time: stored columns come from the
//! data lake, filename-derived columns from partition file names, and
//! UDF-derived columns are computed by a schema-map operator during
//! execution. The catalog persists as `catalog/tables/<name>.json` plus
//! `catalog/udfs.json` under the lake root.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::planner::logical::LogicalPlan;
use crate::storage::DataLake;
use crate::types::{Schema, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    CsvTable,
    BlobDirTable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnSource {
    Stored { position: usize },
    FilenameDerived,
    UdfDerived { udf_name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub value_type: ValueType,
    pub source: ColumnSource,
}

impl ColumnDef {
    pub fn stored(name: &str, value_type: ValueType, position: usize) -> Self {
        ColumnDef {
            name: name.into(),
            value_type,
            source: ColumnSource::Stored { position },
        }
    }

    pub fn filename(name: &str, value_type: ValueType) -> Self {
        ColumnDef {
            name: name.into(),
            value_type,
            source: ColumnSource::FilenameDerived,
        }
    }

    pub fn udf(name: &str, value_type: ValueType, udf_name: &str) -> Self {
        ColumnDef {
            name: name.into(),
            value_type,
            source: ColumnSource::UdfDerived {
                udf_name: udf_name.into(),
            },
        }
    }

    pub fn udf_name(&self) -> Option<&str> {
        match &self.source {
            ColumnSource::UdfDerived { udf_name } => Some(udf_name),
            _ => None,
        }
    }

    /// True for columns materialized by the storage reader.
    pub fn is_materialized(&self) -> bool {
        !matches!(self.source, ColumnSource::UdfDerived { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualTableDef {
    pub name: String,
    pub kind: TableKind,
    pub columns: Vec<ColumnDef>,
    pub partition_count: usize,
    pub root_path: String,
    pub row_count_estimate: u64,
}

impl VirtualTableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Columns produced by the storage reader, in declaration order.
    pub fn materialized_columns(&self) -> impl Iterator<Item = &ColumnDef> {
        self.columns.iter().filter(|c| c.is_materialized())
    }

    pub fn stored_columns(&self) -> Vec<&ColumnDef> {
        let mut stored: Vec<&ColumnDef> = self
            .columns
            .iter()
            .filter(|c| matches!(c.source, ColumnSource::Stored { .. }))
            .collect();
        stored.sort_by_key(|c| match c.source {
            ColumnSource::Stored { position } => position,
            _ => usize::MAX,
        });
        stored
    }

    /// The materialized column a UDF-derived column is computed from: the
    /// first stored column whose type matches the UDF's first input.
    pub fn derived_source(&self, udf: &UdfDef) -> Option<&ColumnDef> {
        let want = *udf.input_types.first()?;
        self.stored_columns()
            .into_iter()
            .find(|c| c.value_type == want)
    }

    /// Finds the derived column computed by `udf_name`, if any.
    pub fn column_derived_by(&self, udf_name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.udf_name() == Some(udf_name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UdfComplexity {
    Simple,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdfDef {
    pub name: String,
    pub input_types: Vec<ValueType>,
    pub output_type: ValueType,
    pub complexity: UdfComplexity,
    /// Virtual milliseconds per evaluated item on a CPU node.
    pub cpu_cost_per_item: f64,
    pub gpu_speedup: f64,
}

impl UdfDef {
    pub fn is_complex(&self) -> bool {
        self.complexity == UdfComplexity::Complex
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UdfId(pub u32);

#[derive(Debug, Default)]
struct CatalogState {
    tables: BTreeMap<String, (TableId, VirtualTableDef)>,
    udfs: BTreeMap<String, (UdfId, UdfDef)>,
    next_table: u32,
    next_udf: u32,
}

/// In-process catalog. Reads take a shared lock; registration is serialized.
#[derive(Debug, Default)]
pub struct Catalog {
    state: RwLock<CatalogState>,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_udf(def: &UdfDef) -> Result<()> {
        if !is_identifier(&def.name) {
            return Err(Error::InvalidDefinition(format!(
                "udf name {:?} is not an identifier",
                def.name
            )));
        }
        if !(def.cpu_cost_per_item.is_finite() && def.cpu_cost_per_item > 0.0) {
            return Err(Error::InvalidDefinition(format!(
                "udf {}: cpu_cost_per_item must be positive",
                def.name
            )));
        }
        if !(def.gpu_speedup.is_finite() && def.gpu_speedup > 0.0) {
            return Err(Error::InvalidDefinition(format!(
                "udf {}: gpu_speedup must be positive",
                def.name
            )));
        }
        if def.is_complex() && def.gpu_speedup < 1.0 {
            return Err(Error::InvalidDefinition(format!(
                "udf {}: complex udfs need gpu_speedup >= 1",
                def.name
            )));
        }
        Ok(())
    }

    pub fn register_udf(&self, def: UdfDef) -> Result<UdfId> {
        Self::check_udf(&def)?;
        let mut st = self.state.write().expect("catalog lock poisoned");
        if st.udfs.contains_key(&def.name) {
            return Err(Error::DuplicateName(def.name));
        }
        let id = UdfId(st.next_udf);
        st.next_udf += 1;
        st.udfs.insert(def.name.clone(), (id, def));
        Ok(id)
    }

    /// Swaps the cost model of a registered UDF. The signature and
    /// complexity must stay the same since tables may derive from it.
    pub fn replace_udf(&self, def: UdfDef) -> Result<()> {
        Self::check_udf(&def)?;
        let mut st = self.state.write().expect("catalog lock poisoned");
        let (_, old) = st
            .udfs
            .get_mut(&def.name)
            .ok_or_else(|| Error::UnknownUdf(def.name.clone()))?;
        if old.input_types != def.input_types
            || old.output_type != def.output_type
            || old.complexity != def.complexity
        {
            return Err(Error::InvalidDefinition(format!(
                "udf {}: signature changed",
                def.name
            )));
        }
        *old = def;
        Ok(())
    }

    /// Registers a virtual table after checking its definition against the
    /// on-disk partition layout. `row_count_estimate` is replaced by an exact
    /// count taken now.
    pub fn register_table(&self, mut def: VirtualTableDef, lake: &DataLake) -> Result<TableId> {
        if !is_identifier(&def.name) {
            return Err(Error::InvalidDefinition(format!(
                "table name {:?} is not an identifier",
                def.name
            )));
        }
        if self.table(&def.name).is_some() {
            return Err(Error::DuplicateName(def.name));
        }
        self.check_columns(&def)?;
        if def.partition_count == 0 {
            return Err(Error::InvalidDefinition(format!(
                "table {}: partition_count must be at least 1",
                def.name
            )));
        }
        let root = lake.resolve(&def.root_path)?;
        if !root.is_dir() {
            return Err(Error::PathMissing(root));
        }
        let parts = lake.list_partitions(&def)?;
        if parts.len() != def.partition_count {
            return Err(Error::PartitionMismatch {
                table: def.name.clone(),
                declared: def.partition_count,
                found: parts.len(),
            });
        }
        def.row_count_estimate = parts.iter().map(|p| p.approx_rows).sum();

        let mut st = self.state.write().expect("catalog lock poisoned");
        if st.tables.contains_key(&def.name) {
            return Err(Error::DuplicateName(def.name));
        }
        let id = TableId(st.next_table);
        st.next_table += 1;
        st.tables.insert(def.name.clone(), (id, def));
        Ok(id)
    }

    fn check_columns(&self, def: &VirtualTableDef) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &def.columns {
            if !is_identifier(&c.name) {
                return Err(Error::InvalidDefinition(format!(
                    "column name {:?} is not an identifier",
                    c.name
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidDefinition(format!(
                    "table {}: duplicate column {}",
                    def.name, c.name
                )));
            }
        }
        let stored = def.stored_columns();
        for (i, c) in stored.iter().enumerate() {
            if c.source != (ColumnSource::Stored { position: i }) {
                return Err(Error::InvalidDefinition(format!(
                    "table {}: stored positions must be 0..{}",
                    def.name,
                    stored.len()
                )));
            }
        }
        match def.kind {
            TableKind::BlobDirTable => {
                if stored.len() != 1 || stored[0].value_type != ValueType::BlobRef {
                    return Err(Error::InvalidDefinition(format!(
                        "blob table {} needs exactly one stored blob_ref column",
                        def.name
                    )));
                }
            }
            TableKind::CsvTable => {
                if stored.is_empty() {
                    return Err(Error::InvalidDefinition(format!(
                        "csv table {} has no stored columns",
                        def.name
                    )));
                }
                if def
                    .columns
                    .iter()
                    .any(|c| c.source == ColumnSource::FilenameDerived)
                {
                    return Err(Error::InvalidDefinition(format!(
                        "csv table {}: filename-derived columns need a blob table",
                        def.name
                    )));
                }
            }
        }
        for c in &def.columns {
            match &c.source {
                ColumnSource::FilenameDerived => {
                    if !matches!(c.value_type, ValueType::Int64 | ValueType::String) {
                        return Err(Error::InvalidDefinition(format!(
                            "filename-derived column {} must be int64 or string",
                            c.name
                        )));
                    }
                }
                ColumnSource::UdfDerived { udf_name } => {
                    let udf = self
                        .udf(udf_name)
                        .ok_or_else(|| Error::UnknownUdf(udf_name.clone()))?;
                    if udf.output_type != c.value_type {
                        return Err(Error::TypeMismatch(format!(
                            "column {} declared {}, udf {} returns {}",
                            c.name, c.value_type, udf.name, udf.output_type
                        )));
                    }
                    if udf.input_types.len() != 1 || def.derived_source(&udf).is_none() {
                        return Err(Error::TypeMismatch(format!(
                            "udf {} cannot derive column {} from the stored columns of {}",
                            udf.name, c.name, def.name
                        )));
                    }
                }
                ColumnSource::Stored { .. } => {}
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<VirtualTableDef> {
        let st = self.state.read().expect("catalog lock poisoned");
        st.tables.get(name).map(|(_, d)| d.clone())
    }

    pub fn table_id(&self, name: &str) -> Option<TableId> {
        let st = self.state.read().expect("catalog lock poisoned");
        st.tables.get(name).map(|(id, _)| *id)
    }

    pub fn udf(&self, name: &str) -> Option<UdfDef> {
        let st = self.state.read().expect("catalog lock poisoned");
        st.udfs.get(name).map(|(_, d)| d.clone())
    }

    pub fn tables(&self) -> Vec<VirtualTableDef> {
        let st = self.state.read().expect("catalog lock poisoned");
        st.tables.values().map(|(_, d)| d.clone()).collect()
    }

    pub fn udfs(&self) -> Vec<UdfDef> {
        let st = self.state.read().expect("catalog lock poisoned");
        let mut v: Vec<(UdfId, UdfDef)> = st.udfs.values().cloned().collect();
        v.sort_by_key(|(id, _)| *id);
        v.into_iter().map(|(_, d)| d).collect()
    }

    /// Writes `catalog/tables/<name>.json` and `catalog/udfs.json` under `lake_root`.
    pub fn save(&self, lake_root: &Path) -> Result<()> {
        let dir = lake_root.join("catalog");
        let tables_dir = dir.join("tables");
        fs::create_dir_all(&tables_dir).map_err(|e| Error::io(&tables_dir, e))?;
        let udfs = serde_json::to_string_pretty(&self.udfs())?;
        let path = dir.join("udfs.json");
        fs::write(&path, udfs + "\n").map_err(|e| Error::io(&path, e))?;
        for t in self.tables() {
            let path = tables_dir.join(format!("{}.json", t.name));
            let body = serde_json::to_string_pretty(&t)?;
            fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Loads a saved catalog, re-validating every table against the lake.
    pub fn load(lake: &DataLake) -> Result<Catalog> {
        let dir = lake.root().join("catalog");
        let path = dir.join("udfs.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let udfs: Vec<UdfDef> = serde_json::from_str(&text)?;
        let catalog = Catalog::new();
        for u in udfs {
            catalog.register_udf(u)?;
        }
        let tables_dir = dir.join("tables");
        let mut entries: Vec<_> = fs::read_dir(&tables_dir)
            .map_err(|e| Error::io(&tables_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for p in entries {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let def: VirtualTableDef = serde_json::from_str(&text)?;
            catalog.register_table(def, lake)?;
        }
        Ok(catalog)
    }

    /// Checks that every table, column, and UDF referenced by `plan`
    /// resolves, and that predicate and join-key types line up.
    pub fn validate_query(&self, plan: &LogicalPlan) -> Result<()> {
        self.validate_node(plan).map(|_| ())
    }

    fn validate_node(&self, plan: &LogicalPlan) -> Result<Schema> {
        match plan {
            LogicalPlan::Scan {
                table,
                alias,
                fields,
                filter,
            } => {
                let def = self
                    .table(table)
                    .ok_or_else(|| Error::UnknownTable(table.clone()))?;
                for f in fields {
                    let col = f
                        .name
                        .strip_prefix(&format!("{alias}."))
                        .ok_or_else(|| Error::UnknownColumn(f.name.clone()))?;
                    let c = def
                        .column(col)
                        .filter(|c| c.is_materialized())
                        .ok_or_else(|| Error::UnknownColumn(f.name.clone()))?;
                    if c.value_type != f.value_type {
                        return Err(Error::TypeMismatch(format!(
                            "{}: catalog says {}, plan says {}",
                            f.name, c.value_type, f.value_type
                        )));
                    }
                }
                let schema = Schema::new(fields.clone());
                if let Some(p) = filter {
                    self.check_predicate(p, &schema)?;
                }
                Ok(schema)
            }
            LogicalPlan::SchemaMap { input, derive } => {
                let mut schema = self.validate_node(input)?;
                for d in derive {
                    let udf = self
                        .udf(&d.udf)
                        .ok_or_else(|| Error::UnknownUdf(d.udf.clone()))?;
                    let src = schema
                        .field(&d.source)
                        .ok_or_else(|| Error::UnknownColumn(d.source.clone()))?;
                    if udf.input_types != [src.value_type] || udf.output_type != d.value_type {
                        return Err(Error::TypeMismatch(format!(
                            "schema map {} = {}({})",
                            d.name, d.udf, d.source
                        )));
                    }
                    schema
                        .fields
                        .push(crate::types::Field::new(&d.name, d.value_type));
                }
                Ok(schema)
            }
            LogicalPlan::Select { input, predicate } => {
                let schema = self.validate_node(input)?;
                self.check_predicate(predicate, &schema)?;
                Ok(schema)
            }
            LogicalPlan::Project { input, items } => {
                let schema = self.validate_node(input)?;
                let mut out = Vec::new();
                for item in items {
                    let ty = item.expr.value_type(&schema, self)?;
                    if ty != item.value_type {
                        return Err(Error::TypeMismatch(format!(
                            "projection {}: {} vs {}",
                            item.name, ty, item.value_type
                        )));
                    }
                    out.push(crate::types::Field::new(&item.name, ty));
                }
                Ok(Schema::new(out))
            }
            LogicalPlan::HashJoinPartition { input, key } => {
                let schema = self.validate_node(input)?;
                let f = schema
                    .field(key)
                    .ok_or_else(|| Error::UnknownColumn(key.clone()))?;
                if f.value_type == ValueType::Float64 {
                    return Err(Error::TypeMismatch(format!("float64 join key {key}")));
                }
                Ok(schema)
            }
            LogicalPlan::Join {
                left: build,
                right: probe,
                left_key: build_key,
                right_key: probe_key,
            }
            | LogicalPlan::HashJoinProbe {
                build,
                probe,
                build_key,
                probe_key,
            } => {
                let b = self.validate_node(build)?;
                let p = self.validate_node(probe)?;
                let bk = b
                    .field(build_key)
                    .ok_or_else(|| Error::UnknownColumn(build_key.clone()))?;
                let pk = p
                    .field(probe_key)
                    .ok_or_else(|| Error::UnknownColumn(probe_key.clone()))?;
                if bk.value_type != pk.value_type {
                    return Err(Error::TypeMismatch(format!(
                        "join {build_key} ({}) = {probe_key} ({})",
                        bk.value_type, pk.value_type
                    )));
                }
                if bk.value_type == ValueType::Float64 {
                    return Err(Error::TypeMismatch(format!("float64 join key {build_key}")));
                }
                Ok(crate::planner::logical::join_schema(&b, &p, probe_key))
            }
        }
    }

    fn check_predicate(&self, pred: &Expr, schema: &Schema) -> Result<()> {
        let ty = pred.value_type(schema, self)?;
        if ty != ValueType::Bool {
            return Err(Error::TypeMismatch(format!(
                "predicate {pred} has type {ty}, expected bool"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::udf::builtin_udfs;

    fn catalog_with_builtins() -> Catalog {
        let c = Catalog::new();
        for u in builtin_udfs() {
            c.register_udf(u).unwrap();
        }
        c
    }

    #[test]
    fn register_udf_checks_invariants() {
        let c = catalog_with_builtins();
        let mut bad = c.udf("hasBangs").unwrap();
        bad.name = "zeroSpeed".into();
        bad.gpu_speedup = 0.0;
        assert!(matches!(
            c.register_udf(bad),
            Err(Error::InvalidDefinition(_))
        ));

        let mut slow = c.udf("hasBangs").unwrap();
        slow.name = "slowOnGpu".into();
        slow.gpu_speedup = 0.5;
        assert!(c.register_udf(slow).is_err());

        let mut free = c.udf("to_upper").unwrap();
        free.name = "free".into();
        free.cpu_cost_per_item = 0.0;
        assert!(c.register_udf(free).is_err());

        let dup = c.udf("hasBangs").unwrap();
        assert!(matches!(c.register_udf(dup), Err(Error::DuplicateName(_))));
    }

    #[test]
    fn udf_def_rejects_unknown_value_type_in_json() {
        let json = r#"{"name":"f","input_types":["decimal"],"output_type":"bool",
            "complexity":"simple","cpu_cost_per_item":1.0,"gpu_speedup":1.0}"#;
        assert!(serde_json::from_str::<UdfDef>(json).is_err());
    }

    #[test]
    fn column_source_json_shape() {
        let c = ColumnDef::udf("bangs", ValueType::Bool, "hasBangs");
        let j = serde_json::to_value(&c).unwrap();
        assert_eq!(
            j,
            serde_json::json!({"name":"bangs","value_type":"bool",
                "source":{"kind":"udf_derived","udf_name":"hasBangs"}})
        );
    }
}
