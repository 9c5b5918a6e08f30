//! Benchmark suites: run each query under several cluster configurations
//! and write a CSV table plus an SVG bar chart per query.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::cost::{billed_minutes, compute_instance_cost};
use super::report::RunReport;
use crate::config::{format_worker_counts, parse_worker_counts, ClusterConfig, WorkerCounts};
use crate::engine::{Engine, EngineOptions};
use crate::error::{Error, Result};
use crate::planner::PlanMode;

pub const REPETITIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub name: String,
    /// `(query name, sql)` in file order.
    pub queries: Vec<(String, String)>,
}

impl Suite {
    /// Parses `name = "sql"` lines. Blank lines and `#` comments are skipped.
    pub fn parse(name: &str, text: &str) -> Result<Suite> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("suite {name}: {e}")))?;
        let mut queries = Vec::with_capacity(table.len());
        for (k, v) in table {
            let toml::Value::String(sql) = v else {
                return Err(Error::Config(format!("suite {name}: {k} is not a string")));
            };
            queries.push((k, sql));
        }
        Ok(Suite {
            name: name.to_string(),
            queries,
        })
    }

    /// The suite name is the file stem.
    pub fn load(path: &Path) -> Result<Suite> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("bad suite path {}", path.display())))?;
        Suite::parse(name, &text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub mode: PlanMode,
    pub workers: WorkerCounts,
}

impl BenchConfig {
    pub fn new(mode: PlanMode, workers: &str) -> Result<BenchConfig> {
        Ok(BenchConfig {
            mode,
            workers: parse_worker_counts(workers)?,
        })
    }

    pub fn label(&self) -> String {
        format!(
            "{} {}",
            self.mode,
            format_worker_counts(&self.workers).replace(',', "+")
        )
    }
}

/// Accepts `mode:workers`, e.g. `disaggregated:general=8,gpu=2`.
impl FromStr for BenchConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<BenchConfig> {
        let (mode, workers) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected mode:workers, got {s:?}")))?;
        BenchConfig::new(mode.parse()?, workers)
    }
}

/// The configurations compared by default: shared-nothing baselines with
/// one, five and ten general workers, a single GPU node, and the mixed
/// eight-general plus two-GPU fleet.
pub fn default_configs() -> Vec<BenchConfig> {
    [
        (PlanMode::Symmetric, "general=1"),
        (PlanMode::Symmetric, "general=5"),
        (PlanMode::Symmetric, "general=10"),
        (PlanMode::Disaggregated, "gpu=1"),
        (PlanMode::Disaggregated, "general=8,gpu=2"),
    ]
    .into_iter()
    .map(|(m, w)| BenchConfig::new(m, w).expect("static worker counts"))
    .collect()
}

/// One averaged measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub query: String,
    pub config: BenchConfig,
    pub virtual_min: f64,
    pub cost_usd: f64,
    pub result_hash: String,
    pub reports: Vec<RunReport>,
}

#[derive(Debug, Default)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub files: Vec<PathBuf>,
    /// Set when a query failed; rows and files hold what finished before.
    pub error: Option<(String, Error)>,
}

/// Runs every query of `suite` under every config, `REPETITIONS` times,
/// and writes `<out_dir>/<suite>/<query>.{csv,svg}`. Virtual makespans
/// are averaged and the cost is billed on the averaged makespan.
pub fn run_benchmark(
    lake_root: &Path,
    base: &ClusterConfig,
    suite: &Suite,
    configs: &[BenchConfig],
    out_dir: &Path,
) -> BenchOutcome {
    let mut outcome = BenchOutcome::default();
    if suite.queries.is_empty() {
        return outcome;
    }
    let mut engines = Vec::with_capacity(configs.len());
    for c in configs {
        let mut cfg = base.clone();
        cfg.workers = c.workers.clone();
        match Engine::open(lake_root, cfg, EngineOptions::default()) {
            Ok(e) => engines.push(e),
            Err(e) => {
                outcome.error = Some((String::new(), e));
                return outcome;
            }
        }
    }
    let dir = out_dir.join(&suite.name);
    for (name, sql) in &suite.queries {
        let mut rows = Vec::with_capacity(configs.len());
        for (c, engine) in configs.iter().zip(&engines) {
            match measure(engine, name, sql, c) {
                Ok(r) => rows.push(r),
                Err(e) => {
                    outcome.error = Some((name.clone(), e));
                    return outcome;
                }
            }
        }
        match write_query_files(&dir, name, &rows) {
            Ok(files) => outcome.files.extend(files),
            Err(e) => {
                outcome.error = Some((name.clone(), e));
                return outcome;
            }
        }
        outcome.rows.extend(rows);
    }
    outcome
}

fn measure(engine: &Engine, name: &str, sql: &str, c: &BenchConfig) -> Result<BenchRow> {
    let mut reports = Vec::with_capacity(REPETITIONS);
    for _ in 0..REPETITIONS {
        reports.push(engine.run_query(sql, c.mode)?.report);
    }
    let hash = reports[0].result_hash.clone();
    if reports.iter().any(|r| r.result_hash != hash) {
        return Err(Error::QueryFailed {
            query_id: name.to_string(),
            reason: "result hash differs between repetitions".into(),
        });
    }
    let virtual_min =
        reports.iter().map(|r| r.virtual_makespan_min).sum::<f64>() / REPETITIONS as f64;
    let minutes = billed_minutes(virtual_min * 60_000.0)?;
    let cost = compute_instance_cost(minutes, &c.workers, &engine.config().pricing)?;
    Ok(BenchRow {
        query: name.to_string(),
        config: c.clone(),
        virtual_min,
        cost_usd: cost.dollars(),
        result_hash: hash,
        reports,
    })
}

pub fn render_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("mode,workers,virtual_min,cost_usd,result_hash\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.3},{:.2},{}",
            r.config.mode,
            format_worker_counts(&r.config.workers).replace(',', "+"),
            r.virtual_min,
            r.cost_usd,
            r.result_hash
        );
    }
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Horizontal bars of virtual makespan, annotated with cost.
pub fn render_svg(title: &str, rows: &[BenchRow]) -> String {
    const BAR_H: usize = 28;
    const LABEL_W: usize = 260;
    const PLOT_W: f64 = 420.0;
    let height = 50 + rows.len() * BAR_H + 10;
    let width = LABEL_W + PLOT_W as usize + 160;
    let max = rows
        .iter()
        .map(|r| r.virtual_min)
        .fold(0.0, f64::max)
        .max(1e-9);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="24" font-size="16">{} (virtual minutes)</text>"#,
        xml_escape(title)
    );
    for (i, r) in rows.iter().enumerate() {
        let y = 40 + i * BAR_H;
        let w = (r.virtual_min / max * PLOT_W).max(1.0);
        let _ = writeln!(
            s,
            r#"<text x="10" y="{}">{}</text>"#,
            y + 18,
            xml_escape(&r.config.label())
        );
        let _ = writeln!(
            s,
            r##"<rect x="{LABEL_W}" y="{}" width="{w:.1}" height="{}" fill="#4a7bb7"/>"##,
            y + 4,
            BAR_H - 8
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}">{:.1} min, ${:.2}</text>"#,
            LABEL_W as f64 + w + 6.0,
            y + 18,
            r.virtual_min,
            r.cost_usd
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write_query_files(dir: &Path, query: &str, rows: &[BenchRow]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("{query}.csv"));
    fs::write(&csv, render_csv(rows)).map_err(|e| Error::io(&csv, e))?;
    let svg = dir.join(format!("{query}.svg"));
    fs::write(&svg, render_svg(query, rows)).map_err(|e| Error::io(&svg, e))?;
    Ok(vec![csv, svg])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_keeps_file_order() {
        let s = Suite::parse("s", "# c\nzeta = \"SELECT 1\"\nalpha = 'SELECT 2'\n").unwrap();
        assert_eq!(s.name, "s");
        assert_eq!(s.queries[0].0, "zeta");
        assert_eq!(s.queries[1], ("alpha".to_string(), "SELECT 2".to_string()));
        assert!(Suite::parse("s", "x = 3").is_err());
        assert!(Suite::parse("s", "").unwrap().queries.is_empty());
    }

    #[test]
    fn config_parses() {
        let c: BenchConfig = "disaggregated:general=8,gpu=2".parse().unwrap();
        assert_eq!(c.mode, PlanMode::Disaggregated);
        assert_eq!(c.label(), "disaggregated general=8+gpu=2");
        assert!("general=8".parse::<BenchConfig>().is_err());
    }

    #[test]
    fn empty_suite_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let suite = Suite {
            name: "empty".into(),
            queries: vec![],
        };
        let out = run_benchmark(
            Path::new("/nonexistent"),
            &ClusterConfig::default(),
            &suite,
            &default_configs(),
            dir.path(),
        );
        assert!(out.rows.is_empty() && out.files.is_empty() && out.error.is_none());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn csv_header_and_svg_shape() {
        let row = BenchRow {
            query: "q".into(),
            config: BenchConfig::new(PlanMode::Symmetric, "general=1").unwrap(),
            virtual_min: 2.5,
            cost_usd: 0.03,
            result_hash: "00ff".into(),
            reports: vec![],
        };
        let csv = render_csv(std::slice::from_ref(&row));
        assert_eq!(
            csv,
            "mode,workers,virtual_min,cost_usd,result_hash\nsymmetric,general=1,2.500,0.03,00ff\n"
        );
        let svg = render_svg("q<1>", &[row]);
        assert!(svg.starts_with("<svg") && svg.contains("q&lt;1&gt;") && svg.contains("<rect"));
    }
}
