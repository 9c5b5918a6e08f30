use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use disagg_core::config::{format_worker_counts, parse_worker_counts, ClusterConfig};
use disagg_core::engine::{Engine, EngineOptions};
use disagg_core::metrics::{default_configs, run_benchmark, BenchConfig, RunReport, Suite};
use disagg_core::planner::explain;
use disagg_core::storage::{generate_demo_data, write_csv, DemoSpec};
use disagg_core::udf::builtin_udfs;
use disagg_core::{Catalog, DataLake, PlanMode};

#[derive(Parser)]
#[command(
    name = "disagg",
    version,
    about = "Disaggregated query engine over a local data lake"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the demo datasets and register them in a new catalog.
    Init {
        #[arg(long, default_value = "lake")]
        lake: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Rows per demo table.
        #[arg(long, default_value_t = 2000)]
        rows: u64,
    },
    /// Print the staged, resource-annotated physical plan.
    Explain {
        sql: String,
        #[command(flatten)]
        cluster: ClusterArgs,
    },
    /// Run one query, print its rows as CSV, and write its run report.
    Query {
        sql: String,
        #[command(flatten)]
        cluster: ClusterArgs,
        /// Where to write the run report (JSON).
        #[arg(long, default_value = "reports/query.json")]
        report: PathBuf,
        /// Append every published task to this JSON-lines file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the coordinator event log here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write every cache entry of the query as <key>.csv here.
        #[arg(long)]
        dump_cache: Option<PathBuf>,
    },
    /// Run a benchmark suite under several cluster configurations.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value = "lake")]
        lake: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
        /// `mode:workers`, e.g. `disaggregated:general=8,gpu=2`; repeatable.
        /// Defaults to the standard comparison set.
        #[arg(long = "run")]
        runs: Vec<String>,
    },
    /// Summarize a saved run report (JSON) or benchmark table (CSV).
    Report { path: PathBuf },
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long, default_value = "lake")]
    lake: PathBuf,
    #[arg(long, default_value = "disaggregated")]
    mode: String,
    /// Cluster config file, TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker counts overriding the config, e.g. `general=8,gpu=2`.
    #[arg(long)]
    workers: Option<String>,
}

impl ClusterArgs {
    fn resolve(&self) -> Result<(PlanMode, ClusterConfig)> {
        let mode: PlanMode = self.mode.parse()?;
        let mut config = match &self.config {
            Some(p) => {
                ClusterConfig::load(p).with_context(|| format!("loading {}", p.display()))?
            }
            None => ClusterConfig::default(),
        };
        if let Some(w) = &self.workers {
            config.workers = parse_worker_counts(w)?;
        }
        config.validate()?;
        check_lake(&self.lake)?;
        Ok((mode, config))
    }
}

fn check_lake(lake: &Path) -> Result<()> {
    if !lake.join("catalog").join("udfs.json").is_file() {
        bail!(
            "{} holds no catalog; run `disagg init --lake {}` first",
            lake.display(),
            lake.display()
        );
    }
    Ok(())
}

fn init(lake: &Path, seed: u64, rows: u64) -> Result<()> {
    let defs = generate_demo_data(lake, &DemoSpec::with_rows(rows), seed)?;
    let dl = DataLake::new(lake);
    let catalog = Catalog::new();
    for u in builtin_udfs() {
        catalog.register_udf(u)?;
    }
    for d in defs {
        catalog.register_table(d, &dl)?;
    }
    catalog.save(lake)?;
    for t in catalog.tables() {
        eprintln!("registered {} ({} partitions)", t.name, t.partition_count);
    }
    Ok(())
}

fn write_json(path: &Path, report: &RunReport) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(report)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn summarize(r: &RunReport) -> String {
    let mut s = format!(
        "{} mode={} workers={} virtual={:.2} min billed={} min cost=${:.2} rows={} hash={} wall={:.1} ms\n",
        r.query_id,
        r.mode,
        format_worker_counts(&r.worker_counts),
        r.virtual_makespan_min,
        r.billed_minutes,
        r.cost_usd,
        r.result_rows,
        r.result_hash,
        r.wall_ms
    );
    for st in &r.per_stage {
        s += &format!(
            "  stage {}: {} tasks, {:.2}..{:.2} min\n",
            st.stage, st.tasks, st.start_min, st.end_min
        );
    }
    for w in &r.per_worker {
        s += &format!(
            "  {}: {} tasks, {:.0}% busy\n",
            w.worker,
            w.tasks,
            w.utilization * 100.0
        );
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { lake, seed, rows } => init(&lake, seed, rows),
        Command::Explain { sql, cluster } => {
            let (mode, config) = cluster.resolve()?;
            let catalog = Catalog::load(&DataLake::new(&cluster.lake))?;
            print!("{}", explain(&sql, &catalog, mode, config.buckets)?);
            Ok(())
        }
        Command::Query {
            sql,
            cluster,
            report,
            trace,
            log,
            dump_cache,
        } => {
            let (mode, config) = cluster.resolve()?;
            let opts = EngineOptions {
                trace,
                log,
                dump_cache,
                query_timeout: None,
            };
            let engine = Engine::open(&cluster.lake, config, opts)?;
            let out = engine.run_query(&sql, mode)?;
            engine.shutdown()?;
            let mut stdout = std::io::stdout().lock();
            write_csv(&out.result, &mut stdout)?;
            stdout.flush()?;
            write_json(&report, &out.report)?;
            eprint!("{}", summarize(&out.report));
            eprintln!("report written to {}", report.display());
            Ok(())
        }
        Command::Bench {
            suite,
            lake,
            config,
            out,
            runs,
        } => {
            check_lake(&lake)?;
            let base = match &config {
                Some(p) => ClusterConfig::load(p)?,
                None => ClusterConfig::default(),
            };
            let configs = if runs.is_empty() {
                default_configs()
            } else {
                runs.iter()
                    .map(|r| r.parse())
                    .collect::<Result<Vec<BenchConfig>, _>>()?
            };
            let suite = Suite::load(&suite)?;
            let outcome = run_benchmark(&lake, &base, &suite, &configs, &out);
            for r in &outcome.rows {
                println!(
                    "{:<8} {:<36} {:>9.2} min  ${:>6.2}  {}",
                    r.query,
                    r.config.label(),
                    r.virtual_min,
                    r.cost_usd,
                    r.result_hash
                );
            }
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            if let Some((query, e)) = outcome.error {
                if query.is_empty() {
                    bail!("benchmark aborted: {e}");
                }
                bail!("benchmark aborted at {query}: {e}");
            }
            Ok(())
        }
        Command::Report { path } => {
            let text =
                fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            if path.extension().is_some_and(|e| e == "csv") {
                for line in text.lines() {
                    let cells: Vec<&str> = line.split(',').collect();
                    println!(
                        "{}",
                        cells
                            .iter()
                            .map(|c| format!("{c:<24}"))
                            .collect::<String>()
                            .trim_end()
                    );
                }
            } else {
                let r: RunReport = serde_json::from_str(&text)
                    .with_context(|| format!("{} is not a run report", path.display()))?;
                print!("{}", summarize(&r));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn workers_flag_overrides_config() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("catalog")).unwrap();
        fs::write(dir.path().join("catalog/udfs.json"), "[]").unwrap();
        let args = ClusterArgs {
            lake: dir.path().to_path_buf(),
            mode: "symmetric".into(),
            config: None,
            workers: Some("general=3".into()),
        };
        let (mode, config) = args.resolve().unwrap();
        assert_eq!(mode, PlanMode::Symmetric);
        assert_eq!(format_worker_counts(&config.workers), "general=3");
        let missing = ClusterArgs {
            lake: dir.path().join("nope"),
            ..args
        };
        assert!(missing.resolve().is_err());
    }
}
