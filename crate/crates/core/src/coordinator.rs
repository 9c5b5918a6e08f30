//! Drives staged execution: publishes tasks whose dependencies are done,
//! consumes completions and partition-ready signals, and finalizes results.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::broker::Broker;
use crate::cache::Cache;
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::planner::{plan_query, PlanMode, StagedPlan};
use crate::storage::{DataLake, PartitionRef};
use crate::task::{Completion, Message, QueueKey, SignalMessage};
use crate::types::RowBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    Queued,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Running,
    Succeeded,
    Failed(String),
}

impl QueryStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, QueryStatus::Running)
    }
}

#[derive(Debug, Clone)]
pub struct QueryExecution {
    pub query_id: String,
    pub sql: String,
    pub mode: PlanMode,
    pub plan: StagedPlan,
    pub task_states: Vec<TaskState>,
    pub completions: Vec<Option<Completion>>,
    /// Gated groups whose partition-ready signal has arrived.
    pub open_groups: BTreeSet<usize>,
    pub stage_cursor: u32,
    pub status: QueryStatus,
    pub started_at: Instant,
    pub finished_at: Option<Instant>,
    /// Per-key cache reads, captured when the query turns terminal.
    pub cache_reads: BTreeMap<String, u64>,
    index: HashMap<String, usize>,
}

impl QueryExecution {
    fn ready(&self, i: usize) -> bool {
        let t = &self.plan.tasks[i];
        let gated = self.plan.groups[t.group].gated;
        self.task_states[i] == TaskState::Pending
            && (!gated || self.open_groups.contains(&t.group))
            && t.depends_on.iter().all(|d| {
                self.index
                    .get(d)
                    .is_some_and(|j| self.task_states[*j] == TaskState::Done)
            })
    }

    pub fn wall_ms(&self) -> f64 {
        let end = self.finished_at.unwrap_or_else(Instant::now);
        (end - self.started_at).as_secs_f64() * 1e3
    }
}

/// Line-oriented event log; optionally mirrored to a file.
#[derive(Default)]
pub struct EventLog {
    lines: Vec<String>,
    sink: Option<BufWriter<File>>,
}

impl EventLog {
    pub fn to_file(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(EventLog {
            lines: Vec::new(),
            sink: Some(BufWriter::new(f)),
        })
    }

    fn push(&mut self, line: String) {
        if let Some(w) = &mut self.sink {
            // Logging is best effort; execution does not depend on it.
            let _ = writeln!(w, "{line}").and_then(|_| w.flush());
        }
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

/// Returns one message per PUBLISH whose dependencies were not all DONE
/// earlier in the log.
pub fn audit(lines: &[String]) -> Vec<String> {
    let mut done: BTreeSet<String> = BTreeSet::new();
    let mut violations = Vec::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("DONE") => {
                if let Some(t) = parts.next() {
                    done.insert(t.to_string());
                }
            }
            Some("PUBLISH") => {
                let Some(task) = parts.next() else { continue };
                let query = task.split(':').next().unwrap_or_default();
                let deps = parts
                    .find_map(|p| p.strip_prefix("deps="))
                    .unwrap_or_default();
                for d in deps.split(',').filter(|d| !d.is_empty() && *d != "-") {
                    let id = format!("{query}:{d}");
                    if !done.contains(&id) {
                        violations.push(format!("{task} published before {id} was done"));
                    }
                }
            }
            _ => {}
        }
    }
    violations
}

pub struct Coordinator {
    broker: Arc<Broker>,
    cache: Arc<Cache>,
    catalog: Arc<Catalog>,
    lake: Arc<DataLake>,
    buckets: u32,
    queries: BTreeMap<String, QueryExecution>,
    next_query: u64,
    log: EventLog,
    /// Task queues some worker serves; submission fails fast otherwise.
    served: Option<BTreeSet<QueueKey>>,
    /// Keep intermediates of successful queries until `release`.
    retain: bool,
}

impl Coordinator {
    pub fn new(
        broker: Arc<Broker>,
        cache: Arc<Cache>,
        catalog: Arc<Catalog>,
        lake: Arc<DataLake>,
        buckets: u32,
    ) -> Self {
        Coordinator {
            broker,
            cache,
            catalog,
            lake,
            buckets,
            queries: BTreeMap::new(),
            next_query: 1,
            log: EventLog::default(),
            served: None,
            retain: false,
        }
    }

    pub fn set_log(&mut self, log: EventLog) {
        self.log = log;
    }

    pub fn set_served_queues(&mut self, served: BTreeSet<QueueKey>) {
        self.served = Some(served);
    }

    pub fn set_retain_intermediates(&mut self, retain: bool) {
        self.retain = retain;
    }

    pub fn log(&self) -> &[String] {
        self.log.lines()
    }

    pub fn query(&self, query_id: &str) -> Option<&QueryExecution> {
        self.queries.get(query_id)
    }

    /// Plans `sql`, publishes every task with no pending dependency, and
    /// returns the new query id. Nothing is published when planning fails.
    pub fn submit_query(&mut self, sql: &str, mode: PlanMode) -> Result<String> {
        let physical = plan_query(sql, &self.catalog, mode, self.buckets)?;
        let query_id = format!("q{}", self.next_query);
        let mut partitions: BTreeMap<String, Vec<PartitionRef>> = BTreeMap::new();
        for n in &physical.nodes {
            if let crate::task::OperatorSpec::Scan { table, .. } = &n.op {
                if !partitions.contains_key(table) {
                    let parts = crate::storage::list_partitions(&self.catalog, &self.lake, table)?;
                    partitions.insert(table.clone(), parts);
                }
            }
        }
        let plan = physical.split(&query_id, &partitions)?;
        if let Some(served) = &self.served {
            if let Some(t) = plan.tasks.iter().find(|t| !served.contains(&t.queue)) {
                return Err(Error::Unschedulable(format!(
                    "no worker serves {} (needed by {})",
                    t.queue, t.task_id
                )));
            }
        }
        self.next_query += 1;
        let n = plan.tasks.len();
        let index = plan
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.task_id.clone(), i))
            .collect();
        self.log
            .push(format!("SUBMIT {query_id} mode={mode} tasks={n}"));
        self.queries.insert(
            query_id.clone(),
            QueryExecution {
                query_id: query_id.clone(),
                sql: sql.to_string(),
                mode,
                plan,
                task_states: vec![TaskState::Pending; n],
                completions: vec![None; n],
                open_groups: BTreeSet::new(),
                stage_cursor: 0,
                status: QueryStatus::Running,
                started_at: Instant::now(),
                finished_at: None,
                cache_reads: BTreeMap::new(),
                index,
            },
        );
        self.publish_ready(&query_id)?;
        Ok(query_id)
    }

    fn publish_ready(&mut self, query_id: &str) -> Result<()> {
        let Some(q) = self.queries.get_mut(query_id) else {
            return Err(Error::UnknownQuery(query_id.to_string()));
        };
        if q.status != QueryStatus::Running {
            return Ok(());
        }
        for i in 0..q.plan.tasks.len() {
            if !q.ready(i) {
                continue;
            }
            let t = &q.plan.tasks[i];
            if t.stage > q.stage_cursor {
                q.stage_cursor = t.stage;
                self.log.push(format!("STAGE {query_id} {}", t.stage));
            }
            let deps = if t.depends_on.is_empty() {
                "-".to_string()
            } else {
                t.depends_on.join(",")
            };
            self.log
                .push(format!("PUBLISH {} {} deps={deps}", t.global_id(), t.queue));
            self.broker.publish(&t.queue, Message::Task(t.clone()))?;
            q.task_states[i] = TaskState::Queued;
        }
        Ok(())
    }

    fn on_completion(&mut self, c: Completion) -> Result<()> {
        let Some(q) = self.queries.get_mut(&c.query_id) else {
            return Ok(());
        };
        let Some(&i) = q.index.get(&c.task_id) else {
            return Ok(());
        };
        if q.status != QueryStatus::Running {
            // Late output of a failed query.
            for k in &c.output_keys {
                self.cache.drop_where(&c.query_id, |key| key != k);
            }
            return Ok(());
        }
        let gid = format!("{}:{}", c.query_id, c.task_id);
        if c.ok {
            q.task_states[i] = TaskState::Done;
            self.log.push(format!("DONE {gid}"));
        } else {
            q.task_states[i] = TaskState::Failed;
            let reason = c.error.clone().unwrap_or_default();
            self.log.push(format!("FAILED {gid} {reason}"));
            q.status = QueryStatus::Failed(format!("{}: {reason}", c.task_id));
        }
        q.completions[i] = Some(c.clone());
        if q.status == QueryStatus::Running && q.task_states.iter().all(|s| *s == TaskState::Done) {
            q.status = QueryStatus::Succeeded;
        }
        if q.status.is_terminal() {
            q.finished_at = Some(Instant::now());
            let label = match &q.status {
                QueryStatus::Succeeded => "ok".to_string(),
                QueryStatus::Failed(r) => format!("failed {r}"),
                QueryStatus::Running => unreachable!(),
            };
            self.log.push(format!("TERMINAL {} {label}", c.query_id));
            q.cache_reads = self.cache.read_counts(&c.query_id);
            let finals: BTreeSet<String> = q.plan.final_keys.iter().cloned().collect();
            let failed = matches!(q.status, QueryStatus::Failed(_));
            let retain = self.retain && !failed;
            self.cache
                .drop_where(&c.query_id, |k| retain || (!failed && finals.contains(k)));
            return Ok(());
        }
        self.publish_ready(&c.query_id)
    }

    fn on_signal(&mut self, s: SignalMessage) -> Result<()> {
        let Some(q) = self.queries.get_mut(&s.query_id) else {
            return Ok(());
        };
        if q.open_groups.insert(s.group) {
            self.log.push(format!(
                "SIGNAL {} {} group={}",
                s.query_id, s.name, s.group
            ));
        }
        self.publish_ready(&s.query_id)
    }

    /// Handles at most one completion or signal, waiting up to `timeout`.
    /// Returns false when nothing arrived.
    pub fn step(&mut self, timeout: Duration) -> Result<bool> {
        let mut queues = vec![QueueKey::completions()];
        queues.extend(
            [
                QueueKey::gpu(),
                QueueKey::cpu_himem(),
                QueueKey::cpu_general(),
            ]
            .iter()
            .map(QueueKey::signals_for),
        );
        let Some((_, msg)) = self.broker.poll_many(&queues, timeout)? else {
            return Ok(false);
        };
        match msg.message {
            Message::Completion(c) => self.on_completion(c)?,
            Message::Signal(s) => self.on_signal(s)?,
            Message::Task(_) => {}
        }
        Ok(true)
    }

    pub fn status(&self, query_id: &str) -> Result<QueryStatus> {
        self.queries
            .get(query_id)
            .map(|q| q.status.clone())
            .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))
    }

    /// Drives until `query_id` is terminal.
    pub fn drive(&mut self, query_id: &str, timeout: Duration) -> Result<QueryStatus> {
        let deadline = Instant::now() + timeout;
        loop {
            let st = self.status(query_id)?;
            if st.is_terminal() {
                return Ok(st);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Timeout(query_id.to_string()));
            }
            self.step((deadline - now).min(Duration::from_millis(50)))?;
        }
    }

    /// Concatenation of the final entries in task order.
    pub fn fetch_results(&self, query_id: &str) -> Result<RowBatch> {
        let q = self
            .queries
            .get(query_id)
            .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))?;
        match &q.status {
            QueryStatus::Running => Err(Error::NotFinished(query_id.to_string())),
            QueryStatus::Failed(reason) => Err(Error::QueryFailed {
                query_id: query_id.to_string(),
                reason: reason.clone(),
            }),
            QueryStatus::Succeeded => {
                let parts = q
                    .plan
                    .final_keys
                    .iter()
                    .map(|k| self.cache.get(k))
                    .collect::<Result<Vec<_>>>()?;
                RowBatch::concat(&q.plan.output_schema, parts.iter().map(|b| b.as_ref()))
            }
        }
    }

    /// Drops the query's remaining cache entries and paths. Call after
    /// fetching results.
    pub fn release(&mut self, query_id: &str) -> usize {
        self.broker.drop_query_paths(query_id);
        self.cache.drop_query(query_id)
    }
}
