//! Per-query run reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cost::{billed_minutes, compute_instance_cost};
use super::makespan::{simulate, SimTask};
use crate::config::{format_worker_counts, ClusterConfig, NodeType, WorkerCounts};
use crate::coordinator::QueryExecution;
use crate::error::{Error, Result};
use crate::hash::result_hash;
use crate::planner::PlanMode;
use crate::types::RowBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: u32,
    pub tasks: usize,
    pub start_min: f64,
    pub end_min: f64,
    pub task_virtual_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerUtilization {
    pub worker: String,
    pub node_type: NodeType,
    pub tasks: u32,
    pub busy_min: f64,
    /// Busy time over makespan, in [0, 1].
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub query_id: String,
    pub mode: PlanMode,
    pub worker_counts: WorkerCounts,
    pub virtual_makespan_min: f64,
    pub billed_minutes: i64,
    pub wall_ms: f64,
    pub cost_usd: f64,
    pub per_stage: Vec<StageTiming>,
    /// Replayed schedule on the configured fleet.
    pub per_worker: Vec<WorkerUtilization>,
    /// Tasks each live worker thread actually executed.
    pub executed_by: BTreeMap<String, u32>,
    pub cache_read_counts: BTreeMap<String, u64>,
    pub result_rows: usize,
    pub result_hash: String,
}

impl RunReport {
    pub fn workers_label(&self) -> String {
        format_worker_counts(&self.worker_counts)
    }
}

/// Virtual-time tasks for a finished query. Tasks of a gated group also
/// wait for every task of the group that feeds it.
pub fn sim_tasks(exec: &QueryExecution) -> Result<Vec<SimTask>> {
    let plan = &exec.plan;
    let mut out = Vec::with_capacity(plan.tasks.len());
    for (i, t) in plan.tasks.iter().enumerate() {
        let c = exec.completions[i]
            .as_ref()
            .ok_or_else(|| Error::NotFinished(format!("{}:{}", exec.query_id, t.task_id)))?;
        let mut deps = t.depends_on.clone();
        if plan.groups[t.group].gated {
            for upstream in plan
                .tasks
                .iter()
                .filter(|u| u.signal.as_ref().is_some_and(|s| s.group == t.group))
            {
                if !deps.contains(&upstream.task_id) {
                    deps.push(upstream.task_id.clone());
                }
            }
        }
        out.push(SimTask {
            id: t.task_id.clone(),
            queue: t.queue.clone(),
            duration_ms: c.virtual_ms,
            depends_on: deps,
        });
    }
    Ok(out)
}

pub fn build_report(
    exec: &QueryExecution,
    result: &RowBatch,
    config: &ClusterConfig,
) -> Result<RunReport> {
    let tasks = sim_tasks(exec)?;
    let schedule = simulate(&tasks, &config.workers)?;
    let makespan_min = schedule.makespan_ms / 60_000.0;
    let minutes = billed_minutes(schedule.makespan_ms)?;
    let cost = compute_instance_cost(minutes, &config.workers, &config.pricing)?;

    let mut stages: BTreeMap<u32, StageTiming> = BTreeMap::new();
    for a in &schedule.assignments {
        let t = exec.plan.task(&a.task).expect("simulated task exists");
        let s = stages.entry(t.stage).or_insert(StageTiming {
            stage: t.stage,
            tasks: 0,
            start_min: f64::INFINITY,
            end_min: 0.0,
            task_virtual_ms: 0.0,
        });
        s.tasks += 1;
        s.start_min = s.start_min.min(a.start_ms / 60_000.0);
        s.end_min = s.end_min.max(a.finish_ms / 60_000.0);
        s.task_virtual_ms += a.finish_ms - a.start_ms;
    }
    let per_worker = schedule
        .workers
        .iter()
        .map(|w| WorkerUtilization {
            worker: w.name.clone(),
            node_type: w.node_type,
            tasks: w.tasks,
            busy_min: w.busy_ms / 60_000.0,
            utilization: if schedule.makespan_ms > 0.0 {
                w.busy_ms / schedule.makespan_ms
            } else {
                0.0
            },
        })
        .collect();
    let mut executed_by = BTreeMap::new();
    for c in exec.completions.iter().flatten() {
        *executed_by.entry(c.worker.clone()).or_insert(0) += 1;
    }
    Ok(RunReport {
        query_id: exec.query_id.clone(),
        mode: exec.mode,
        worker_counts: config.workers.clone(),
        virtual_makespan_min: makespan_min,
        billed_minutes: minutes,
        wall_ms: exec.wall_ms(),
        cost_usd: cost.dollars(),
        per_stage: stages.into_values().collect(),
        per_worker,
        executed_by,
        cache_read_counts: exec.cache_reads.clone(),
        result_rows: result.num_rows(),
        result_hash: result_hash(result),
    })
}
