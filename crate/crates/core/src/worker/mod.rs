//! Execution units that poll capability queues, run task pipelines, write
//! results to the cache, and report completions.

pub mod kernels;
pub mod pipeline;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::broker::Broker;
use crate::cache::Cache;
use crate::catalog::Catalog;
use crate::config::{NodeType, VirtualCosts};
use crate::error::Result;
use crate::storage::DataLake;
use crate::task::{Completion, Message, QueueKey, SignalMessage, TaskMessage, PARTITION_READY};

pub use kernels::{exec_hash_partition, exec_probe_join, nested_loop_join};
pub use pipeline::{exec_pipeline, ExecContext, PipelineOutput};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub worker_id: String,
    pub node_type: NodeType,
    /// Polled in this order; the node type's primary queue comes first.
    pub queues: Vec<QueueKey>,
}

impl WorkerProfile {
    pub fn new(worker_id: impl Into<String>, node_type: NodeType) -> Self {
        WorkerProfile {
            worker_id: worker_id.into(),
            node_type,
            queues: node_type.queues(),
        }
    }
}

/// Everything a worker shares with the rest of the cluster.
#[derive(Clone)]
pub struct Services {
    pub broker: Arc<Broker>,
    pub cache: Arc<Cache>,
    pub lake: Arc<DataLake>,
    pub catalog: Arc<Catalog>,
    pub costs: VirtualCosts,
}

/// Executes one task and performs every side effect of finishing it: cache
/// puts, path registration, the optional partition-ready signal, and the
/// completion message.
pub fn handle_task(
    profile: &WorkerProfile,
    services: &Services,
    task: &TaskMessage,
) -> Result<Completion> {
    let start = Instant::now();
    let ctx = ExecContext {
        catalog: &services.catalog,
        lake: &services.lake,
        cache: &services.cache,
        costs: &services.costs,
    };
    // UDF speedup applies to work routed through the GPU queue.
    let accelerated = task.queue.is_gpu() && profile.node_type == NodeType::Gpu;
    let result = exec_pipeline(&ctx, task, accelerated).and_then(|out| {
        let mut keys = Vec::new();
        for (key, batch) in out.outputs.iter().cloned() {
            let loc = services.cache.put(&key, batch)?;
            services.broker.register_cache_path(&key, loc)?;
            keys.push(key);
        }
        Ok((out, keys))
    });
    let completion = match result {
        Ok((out, keys)) => {
            if let Some(sig) = &task.signal {
                if services.broker.all_registered(&sig.siblings) {
                    services.broker.publish(
                        &sig.queue,
                        Message::Signal(SignalMessage {
                            name: PARTITION_READY.to_string(),
                            query_id: task.query_id.clone(),
                            group: sig.group,
                            keys: sig.siblings.clone(),
                        }),
                    )?;
                }
            }
            Completion {
                query_id: task.query_id.clone(),
                task_id: task.task_id.clone(),
                worker: profile.worker_id.clone(),
                queue: task.queue.clone(),
                ok: true,
                error: None,
                output_keys: keys,
                rows_in: out.rows_in,
                rows_out: out.rows_out,
                virtual_ms: out.virtual_ms,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            }
        }
        Err(e) => Completion {
            query_id: task.query_id.clone(),
            task_id: task.task_id.clone(),
            worker: profile.worker_id.clone(),
            queue: task.queue.clone(),
            ok: false,
            error: Some(e.to_string()),
            output_keys: vec![],
            rows_in: 0,
            rows_out: 0,
            virtual_ms: 0.0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    };
    services.broker.publish(
        &QueueKey::completions(),
        Message::Completion(completion.clone()),
    )?;
    Ok(completion)
}

/// Polls the profile's queues until `stop` is set. Task failures are
/// reported as failed completions; the loop keeps going.
pub fn run_worker(
    profile: WorkerProfile,
    services: Services,
    stop: Arc<AtomicBool>,
) -> Result<u64> {
    let mut handled = 0;
    while !stop.load(Ordering::Acquire) {
        let Some((_, msg)) = services
            .broker
            .poll_many(&profile.queues, Duration::from_millis(20))?
        else {
            continue;
        };
        if let Message::Task(task) = msg.message {
            handle_task(&profile, &services, &task)?;
            handled += 1;
        }
    }
    Ok(handled)
}
