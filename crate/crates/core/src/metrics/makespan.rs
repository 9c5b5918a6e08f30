//! Deterministic list-scheduling replay of a task DAG on a worker fleet.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::{NodeType, WorkerCounts};
use crate::error::{Error, Result};
use crate::task::QueueKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTask {
    pub id: String,
    pub queue: QueueKey,
    pub duration_ms: f64,
    pub depends_on: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub task: String,
    pub worker: usize,
    pub start_ms: f64,
    pub finish_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorker {
    pub name: String,
    pub node_type: NodeType,
    pub busy_ms: f64,
    pub tasks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub makespan_ms: f64,
    pub assignments: Vec<Assignment>,
    pub workers: Vec<SimWorker>,
}

/// Releases each task when its dependencies finish, takes released tasks
/// in (release time, input order), and places each on the eligible worker
/// that can start it earliest. Ties prefer a worker whose primary queue is
/// the task's queue, then the lower worker index.
pub fn simulate(tasks: &[SimTask], counts: &WorkerCounts) -> Result<Schedule> {
    let mut workers = Vec::new();
    for node in NodeType::ALL {
        for i in 0..counts.get(&node).copied().unwrap_or(0) {
            workers.push(SimWorker {
                name: format!("{node}-{i}"),
                node_type: node,
                busy_ms: 0.0,
                tasks: 0,
            });
        }
    }
    let index: HashMap<&str, usize> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.as_str(), i))
        .collect();
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); tasks.len()];
    let mut waiting: Vec<usize> = vec![0; tasks.len()];
    for (i, t) in tasks.iter().enumerate() {
        if t.duration_ms.is_nan() || t.duration_ms < 0.0 {
            return Err(Error::NegativeInput(format!(
                "task {} duration {}",
                t.id, t.duration_ms
            )));
        }
        if !workers.iter().any(|w| w.node_type.serves(&t.queue)) {
            return Err(Error::Unschedulable(format!(
                "task {} needs {} but no worker serves it",
                t.id, t.queue
            )));
        }
        for d in &t.depends_on {
            let j = *index.get(d.as_str()).ok_or_else(|| {
                Error::Config(format!("task {} depends on unknown task {d}", t.id))
            })?;
            dependents[j].push(i);
            waiting[i] += 1;
        }
    }

    let mut free_at = vec![0.0f64; workers.len()];
    let mut release = vec![0.0f64; tasks.len()];
    let mut ready: Vec<usize> = (0..tasks.len()).filter(|i| waiting[*i] == 0).collect();
    let mut assignments = Vec::with_capacity(tasks.len());
    let mut makespan: f64 = 0.0;
    while !ready.is_empty() {
        let pos = (0..ready.len())
            .min_by(|a, b| {
                release[ready[*a]]
                    .total_cmp(&release[ready[*b]])
                    .then(ready[*a].cmp(&ready[*b]))
            })
            .expect("ready is non-empty");
        let ti = ready.swap_remove(pos);
        let t = &tasks[ti];
        let (wi, start) = workers
            .iter()
            .enumerate()
            .filter(|(_, w)| w.node_type.serves(&t.queue))
            .map(|(wi, w)| {
                (
                    wi,
                    free_at[wi].max(release[ti]),
                    w.node_type.primary_queue() != t.queue,
                )
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)))
            .map(|(wi, s, _)| (wi, s))
            .expect("eligibility checked above");
        let finish = start + t.duration_ms;
        free_at[wi] = finish;
        workers[wi].busy_ms += t.duration_ms;
        workers[wi].tasks += 1;
        makespan = makespan.max(finish);
        assignments.push(Assignment {
            task: t.id.clone(),
            worker: wi,
            start_ms: start,
            finish_ms: finish,
        });
        for &d in &dependents[ti] {
            release[d] = release[d].max(finish);
            waiting[d] -= 1;
            if waiting[d] == 0 {
                ready.push(d);
            }
        }
    }
    if assignments.len() != tasks.len() {
        return Err(Error::Cycle);
    }
    Ok(Schedule {
        makespan_ms: makespan,
        assignments,
        workers,
    })
}

/// Completion time of the last task, in virtual minutes.
pub fn virtual_makespan(tasks: &[SimTask], counts: &WorkerCounts) -> Result<f64> {
    Ok(simulate(tasks, counts)?.makespan_ms / 60_000.0)
}
