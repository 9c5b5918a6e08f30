//! A simulated cluster in one process: worker threads, the broker, the
//! cache, and a coordinator, wired together.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::broker::Broker;
use crate::cache::Cache;
use crate::catalog::Catalog;
use crate::config::{ClusterConfig, NodeType};
use crate::coordinator::{Coordinator, EventLog, QueryStatus};
use crate::error::{Error, Result};
use crate::metrics::report::{build_report, RunReport};
use crate::planner::{explain, PlanMode};
use crate::storage::DataLake;
use crate::types::RowBatch;
use crate::worker::{run_worker, Services, WorkerProfile};

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    /// JSON-lines file receiving every published task.
    pub trace: Option<PathBuf>,
    /// Coordinator event log file.
    pub log: Option<PathBuf>,
    /// Directory receiving every cache entry of each query as CSV.
    pub dump_cache: Option<PathBuf>,
    pub query_timeout: Option<Duration>,
}

#[derive(Debug, Clone)]
pub struct QueryRun {
    pub query_id: String,
    pub result: RowBatch,
    pub report: RunReport,
}

pub struct Engine {
    services: Services,
    config: ClusterConfig,
    options: EngineOptions,
    coordinator: Mutex<Coordinator>,
    stop: Arc<AtomicBool>,
    handles: Vec<JoinHandle<Result<u64>>>,
    profiles: Vec<WorkerProfile>,
}

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

impl Engine {
    /// Loads the catalog saved under `lake_root` and starts the workers.
    pub fn open(lake_root: &Path, config: ClusterConfig, options: EngineOptions) -> Result<Engine> {
        let lake = DataLake::new(lake_root);
        let catalog = Catalog::load(&lake)?;
        Engine::start(lake, catalog, config, options)
    }

    pub fn start(
        lake: DataLake,
        catalog: Catalog,
        config: ClusterConfig,
        options: EngineOptions,
    ) -> Result<Engine> {
        config.validate()?;
        let broker = match &options.trace {
            Some(p) => Broker::with_trace(p)?,
            None => Broker::new(),
        };
        let services = Services {
            broker: Arc::new(broker),
            cache: Arc::new(Cache::new(config.cache_capacity_bytes)),
            lake: Arc::new(lake),
            catalog: Arc::new(catalog),
            costs: config.virtual_costs.clone(),
        };
        let mut coordinator = Coordinator::new(
            services.broker.clone(),
            services.cache.clone(),
            services.catalog.clone(),
            services.lake.clone(),
            config.buckets,
        );
        if let Some(p) = &options.log {
            coordinator.set_log(EventLog::to_file(p)?);
        }
        coordinator.set_retain_intermediates(options.dump_cache.is_some());
        let mut profiles = Vec::new();
        for node in NodeType::ALL {
            for i in 0..config.workers.get(&node).copied().unwrap_or(0) {
                profiles.push(WorkerProfile::new(format!("{node}-{i}"), node));
            }
        }
        let served: BTreeSet<_> = profiles.iter().flat_map(|p| p.queues.clone()).collect();
        coordinator.set_served_queues(served);

        let stop = Arc::new(AtomicBool::new(false));
        let handles = profiles
            .iter()
            .map(|p| {
                let (p, s, stop) = (p.clone(), services.clone(), stop.clone());
                std::thread::Builder::new()
                    .name(p.worker_id.clone())
                    .spawn(move || run_worker(p, s, stop))
                    .map_err(|e| Error::io("worker thread", e))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Engine {
            services,
            config,
            options,
            coordinator: Mutex::new(coordinator),
            stop,
            handles,
            profiles,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.services.catalog
    }

    pub fn cache(&self) -> &Cache {
        &self.services.cache
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn profiles(&self) -> &[WorkerProfile] {
        &self.profiles
    }

    fn coord(&self) -> MutexGuard<'_, Coordinator> {
        self.coordinator.lock().expect("coordinator lock poisoned")
    }

    pub fn explain(&self, sql: &str, mode: PlanMode) -> Result<String> {
        explain(sql, self.catalog(), mode, self.config.buckets)
    }

    pub fn submit(&self, sql: &str, mode: PlanMode) -> Result<String> {
        self.coord().submit_query(sql, mode)
    }

    /// Drives the coordinator until `query_id` is terminal. The lock is
    /// released between steps so several callers can wait concurrently.
    pub fn wait(&self, query_id: &str, timeout: Duration) -> Result<QueryStatus> {
        let deadline = Instant::now() + timeout;
        loop {
            {
                let mut c = self.coord();
                let st = c.status(query_id)?;
                if st.is_terminal() {
                    return Ok(st);
                }
                let now = Instant::now();
                if now >= deadline {
                    return Err(Error::Timeout(query_id.to_string()));
                }
                c.step((deadline - now).min(Duration::from_millis(10)))?;
            }
            std::thread::yield_now();
        }
    }

    pub fn fetch(&self, query_id: &str) -> Result<RowBatch> {
        self.coord().fetch_results(query_id)
    }

    pub fn report(&self, query_id: &str, result: &RowBatch) -> Result<RunReport> {
        let c = self.coord();
        let exec = c
            .query(query_id)
            .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))?;
        build_report(exec, result, &self.config)
    }

    pub fn release(&self, query_id: &str) -> usize {
        self.coord().release(query_id)
    }

    /// Submit, wait, fetch, report, and release in one call.
    pub fn run_query(&self, sql: &str, mode: PlanMode) -> Result<QueryRun> {
        let query_id = self.submit(sql, mode)?;
        let status = self.wait(
            &query_id,
            self.options.query_timeout.unwrap_or(DEFAULT_TIMEOUT),
        )?;
        if let QueryStatus::Failed(reason) = status {
            self.release(&query_id);
            return Err(Error::QueryFailed { query_id, reason });
        }
        let result = self.fetch(&query_id)?;
        let report = self.report(&query_id, &result)?;
        if let Some(dir) = &self.options.dump_cache {
            self.services.cache.dump(dir)?;
        }
        self.release(&query_id);
        Ok(QueryRun {
            query_id,
            result,
            report,
        })
    }

    pub fn event_log(&self) -> Vec<String> {
        self.coord().log().to_vec()
    }

    pub fn shutdown(mut self) -> Result<()> {
        self.stop_workers()
    }

    fn stop_workers(&mut self) -> Result<()> {
        self.stop.store(true, Ordering::Release);
        let mut first_err = None;
        for h in self.handles.drain(..) {
            match h.join() {
                Ok(Ok(_)) => {}
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(Error::Config("worker thread panicked".into()));
                }
            }
        }
        first_err.map_or(Ok(()), Err)
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        let _ = self.stop_workers();
    }
}
