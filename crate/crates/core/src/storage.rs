//! Data-lake adapter over a local directory.
//!
//! Layout: `<root>/<table>/part-<index>.csv` for CSV tables and
//! `<root>/<table>/part-<index>/<id>.<ext>` for blob-directory tables.
//! CSV files carry a mandatory header, comma separators, `\n` line ends,
//! and no quoting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ColumnDef, ColumnSource, TableKind, VirtualTableDef};
use crate::error::{Error, Result};
use crate::types::{validate_blob_path, Field, RowBatch, Schema, Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionRef {
    pub table: String,
    pub index: usize,
    /// Data-lake-relative path of the partition file or directory.
    pub path: String,
    pub approx_rows: u64,
}

#[derive(Debug, Clone)]
pub struct DataLake {
    root: PathBuf,
}

fn partition_index(name: &str, kind: TableKind) -> Option<usize> {
    let rest = name.strip_prefix("part-")?;
    let digits = match kind {
        TableKind::CsvTable => rest.strip_suffix(".csv")?,
        TableKind::BlobDirTable => rest,
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

impl DataLake {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataLake { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves a lake-relative path, refusing absolute paths and traversal.
    pub fn resolve(&self, rel: &str) -> Result<PathBuf> {
        validate_blob_path(rel)?;
        Ok(self.root.join(rel))
    }

    /// One ref per physical partition, ordered by index.
    pub fn list_partitions(&self, def: &VirtualTableDef) -> Result<Vec<PartitionRef>> {
        let dir = self.resolve(&def.root_path)?;
        if !dir.is_dir() {
            return Err(Error::PathMissing(dir));
        }
        let mut found = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(index) = partition_index(&name, def.kind) else {
                continue;
            };
            let is_dir = entry.path().is_dir();
            if is_dir != (def.kind == TableKind::BlobDirTable) {
                continue;
            }
            found.push((index, name));
        }
        found.sort();
        let mut refs = Vec::with_capacity(found.len());
        for (pos, (index, name)) in found.into_iter().enumerate() {
            if index != pos {
                return Err(Error::InvalidDefinition(format!(
                    "table {}: partition indices are not contiguous (missing part-{pos})",
                    def.name
                )));
            }
            let rel = format!("{}/{}", def.root_path, name);
            let approx_rows = self.count_rows(def.kind, &self.root.join(&rel))?;
            refs.push(PartitionRef {
                table: def.name.clone(),
                index,
                path: rel,
                approx_rows,
            });
        }
        Ok(refs)
    }

    fn count_rows(&self, kind: TableKind, path: &Path) -> Result<u64> {
        match kind {
            TableKind::CsvTable => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Ok(text.lines().skip(1).filter(|l| !l.is_empty()).count() as u64)
            }
            TableKind::BlobDirTable => Ok(blob_files(path)?.len() as u64),
        }
    }

    /// Reads one partition. Stored and filename-derived columns are
    /// materialized under their bare names; UDF-derived columns are not.
    pub fn read_partition(&self, def: &VirtualTableDef, part: &PartitionRef) -> Result<RowBatch> {
        let path = self.resolve(&part.path)?;
        match def.kind {
            TableKind::CsvTable => read_csv(&path, def),
            TableKind::BlobDirTable => self.read_blob_dir(&path, &part.path, def),
        }
    }

    fn read_blob_dir(&self, path: &Path, rel: &str, def: &VirtualTableDef) -> Result<RowBatch> {
        let cols: Vec<&ColumnDef> = def.materialized_columns().collect();
        let schema = Schema::new(
            cols.iter()
                .map(|c| Field::new(&c.name, c.value_type))
                .collect(),
        );
        let mut rows = Vec::new();
        for (line, name) in blob_files(path)?.into_iter().enumerate() {
            let stem = name.split('.').next().unwrap_or(&name);
            let mut row = Vec::with_capacity(cols.len());
            for c in &cols {
                let v =
                    match c.source {
                        ColumnSource::Stored { .. } => Value::blob_ref(format!("{rel}/{name}"))?,
                        ColumnSource::FilenameDerived => Value::parse_as(stem, c.value_type)
                            .map_err(|reason| Error::MalformedRow {
                                file: path.join(&name),
                                line: line + 1,
                                reason,
                            })?,
                        ColumnSource::UdfDerived { .. } => unreachable!("filtered above"),
                    };
                row.push(v);
            }
            rows.push(row);
        }
        Ok(RowBatch { schema, rows })
    }

    pub fn read_blob(&self, rel: &str) -> Result<Vec<u8>> {
        let path = self.resolve(rel)?;
        fs::read(&path).map_err(|e| Error::io(&path, e))
    }
}

fn blob_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn read_csv(path: &Path, def: &VirtualTableDef) -> Result<RowBatch> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stored = def.stored_columns();
    let schema = Schema::new(
        stored
            .iter()
            .map(|c| Field::new(&c.name, c.value_type))
            .collect(),
    );
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or("");
    let expected: Vec<&str> = stored.iter().map(|c| c.name.as_str()).collect();
    if header.split(',').collect::<Vec<_>>() != expected {
        return Err(Error::MalformedRow {
            file: path.to_path_buf(),
            line: 1,
            reason: format!("header {header:?} does not match {}", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let line_no = i + 2;
        if cells.len() != stored.len() {
            return Err(Error::MalformedRow {
                file: path.to_path_buf(),
                line: line_no,
                reason: format!("expected {} fields, found {}", stored.len(), cells.len()),
            });
        }
        let row = cells
            .iter()
            .zip(&stored)
            .map(|(cell, c)| Value::parse_as(cell, c.value_type))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|reason| Error::MalformedRow {
                file: path.to_path_buf(),
                line: line_no,
                reason,
            })?;
        rows.push(row);
    }
    Ok(RowBatch { schema, rows })
}

/// Renders a batch in the lake's CSV dialect.
pub fn write_csv(batch: &RowBatch, mut out: impl Write) -> std::io::Result<()> {
    let header: Vec<&str> = batch.schema.names().collect();
    writeln!(out, "{}", header.join(","))?;
    for row in &batch.rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Looks up `table` in the catalog and lists its partitions.
pub fn list_partitions(
    catalog: &Catalog,
    lake: &DataLake,
    table: &str,
) -> Result<Vec<PartitionRef>> {
    let def = catalog
        .table(table)
        .ok_or_else(|| Error::UnknownTable(table.to_string()))?;
    lake.list_partitions(&def)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoDataset {
    /// Blob files whose content is the decimal id.
    Celeba,
    /// CSV `id,smile,isometric` of random molecule-like strings.
    Pubchem,
    /// CSV `id,address`.
    Customer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoTable {
    pub name: String,
    pub dataset: DemoDataset,
    pub rows: u64,
    pub partitions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoSpec {
    pub tables: Vec<DemoTable>,
}

impl DemoSpec {
    /// Desk-scale defaults: 2000 blobs in 8 partitions, 2000 molecules and
    /// 2000 customers in 4 partitions each.
    pub fn desk_scale() -> Self {
        Self::with_rows(2000)
    }

    pub fn with_rows(n: u64) -> Self {
        DemoSpec {
            tables: vec![
                DemoTable {
                    name: "celeba_s".into(),
                    dataset: DemoDataset::Celeba,
                    rows: n,
                    partitions: 8,
                },
                DemoTable {
                    name: "pubchem_s".into(),
                    dataset: DemoDataset::Pubchem,
                    rows: n,
                    partitions: 4,
                },
                DemoTable {
                    name: "customer_s".into(),
                    dataset: DemoDataset::Customer,
                    rows: n,
                    partitions: 4,
                },
            ],
        }
    }
}

impl DemoTable {
    /// The catalog definition for this generated table.
    pub fn table_def(&self) -> VirtualTableDef {
        let columns = match self.dataset {
            DemoDataset::Celeba => vec![
                ColumnDef::stored("image", ValueType::BlobRef, 0),
                ColumnDef::filename("id", ValueType::Int64),
                ColumnDef::udf("eyeglasses", ValueType::Bool, "hasEyeglasses"),
                ColumnDef::udf("bangs", ValueType::Bool, "hasBangs"),
            ],
            DemoDataset::Pubchem => vec![
                ColumnDef::stored("id", ValueType::Int64, 0),
                ColumnDef::stored("smile", ValueType::String, 1),
                ColumnDef::stored("isometric", ValueType::String, 2),
            ],
            DemoDataset::Customer => vec![
                ColumnDef::stored("id", ValueType::Int64, 0),
                ColumnDef::stored("address", ValueType::String, 1),
            ],
        };
        VirtualTableDef {
            name: self.name.clone(),
            kind: match self.dataset {
                DemoDataset::Celeba => TableKind::BlobDirTable,
                _ => TableKind::CsvTable,
            },
            columns,
            partition_count: self.partitions,
            root_path: self.name.clone(),
            row_count_estimate: self.rows,
        }
    }
}

const SMILE_ALPHABET: &[u8] = b"CNOSPFclnos()=#123456[]@+-";
const WORDS: &[&str] = &[
    "Oak", "Maple", "Cedar", "Pine", "Elm", "Birch", "Willow", "Ash", "Spruce", "Aspen", "Hill",
    "Lake", "River", "Park", "Sunset", "Harbor",
];
const SUFFIXES: &[&str] = &["St", "Ave", "Rd", "Blvd", "Ln", "Way"];

fn random_smile(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(8..=24);
    (0..len)
        .map(|_| SMILE_ALPHABET[rng.gen_range(0..SMILE_ALPHABET.len())] as char)
        .collect()
}

fn random_address(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{} {} {}",
        rng.gen_range(1..10_000),
        WORDS[rng.gen_range(0..WORDS.len())],
        SUFFIXES[rng.gen_range(0..SUFFIXES.len())]
    )
}

/// Splits shuffled ids `1..=n` into `parts` contiguous chunks, each sorted.
fn assign_ids(n: u64, parts: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<i64>> {
    let mut ids: Vec<i64> = (1..=n as i64).collect();
    ids.shuffle(rng);
    let per = (n as usize).div_ceil(parts.max(1));
    let mut out: Vec<Vec<i64>> = (0..parts)
        .map(|p| {
            let lo = (p * per).min(ids.len());
            let hi = ((p + 1) * per).min(ids.len());
            ids[lo..hi].to_vec()
        })
        .collect();
    for chunk in &mut out {
        chunk.sort_unstable();
    }
    out
}

/// Writes the desk-scale stand-in datasets under `root`, which must be
/// empty or absent. Output is byte-identical for a fixed `DemoSpec` and seed.
pub fn generate_demo_data(root: &Path, spec: &DemoSpec, seed: u64) -> Result<Vec<VirtualTableDef>> {
    if root.exists() {
        let mut entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        if entries.next().is_some() {
            return Err(Error::TargetNotEmpty(root.to_path_buf()));
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut defs = Vec::new();
    for (ti, table) in spec.tables.iter().enumerate() {
        if table.partitions == 0 {
            return Err(Error::InvalidDefinition(format!(
                "demo table {} needs at least one partition",
                table.name
            )));
        }
        // Independent stream per table so adding a table leaves the others unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ti as u64 + 1);
        let dir = root.join(&table.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let chunks = assign_ids(table.rows, table.partitions, &mut rng);
        for (p, ids) in chunks.iter().enumerate() {
            match table.dataset {
                DemoDataset::Celeba => {
                    let pdir = dir.join(format!("part-{p}"));
                    fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
                    for id in ids {
                        let f = pdir.join(format!("{id}.jpg"));
                        fs::write(&f, id.to_string()).map_err(|e| Error::io(&f, e))?;
                    }
                }
                DemoDataset::Pubchem | DemoDataset::Customer => {
                    let mut body = String::new();
                    if table.dataset == DemoDataset::Pubchem {
                        body.push_str("id,smile,isometric\n");
                        for id in ids {
                            let smile = random_smile(&mut rng);
                            let iso = random_smile(&mut rng);
                            body.push_str(&format!("{id},{smile},{iso}\n"));
                        }
                    } else {
                        body.push_str("id,address\n");
                        for id in ids {
                            body.push_str(&format!("{id},{}\n", random_address(&mut rng)));
                        }
                    }
                    let f = dir.join(format!("part-{p}.csv"));
                    fs::write(&f, body).map_err(|e| Error::io(&f, e))?;
                }
            }
        }
        defs.push(table.table_def());
    }
    Ok(defs)
}
