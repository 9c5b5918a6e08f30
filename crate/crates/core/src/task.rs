//! Messages exchanged through the broker: task descriptions, completions,
//! and partition-ready signals.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::planner::logical::{DerivedColumn, ProjectItem};
use crate::storage::PartitionRef;
use crate::types::Field;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueueKey(pub String);

impl QueueKey {
    pub const GPU: &'static str = "q.gpu";
    pub const CPU_HIMEM: &'static str = "q.cpu.himem";
    pub const CPU_GENERAL: &'static str = "q.cpu.general";
    pub const COMPLETIONS: &'static str = "q.completions";

    pub fn new(s: impl Into<String>) -> Self {
        QueueKey(s.into())
    }

    pub fn gpu() -> Self {
        QueueKey::new(Self::GPU)
    }

    pub fn cpu_himem() -> Self {
        QueueKey::new(Self::CPU_HIMEM)
    }

    pub fn cpu_general() -> Self {
        QueueKey::new(Self::CPU_GENERAL)
    }

    pub fn completions() -> Self {
        QueueKey::new(Self::COMPLETIONS)
    }

    /// Signal queue paired with a task queue, `q.signals.<queue>`.
    pub fn signals_for(task_queue: &QueueKey) -> Self {
        QueueKey(format!("q.signals.{}", task_queue.0))
    }

    /// Every queue the broker accepts.
    pub fn all() -> Vec<QueueKey> {
        let tasks = [Self::GPU, Self::CPU_HIMEM, Self::CPU_GENERAL].map(QueueKey::new);
        let mut out: Vec<QueueKey> = tasks.to_vec();
        out.push(QueueKey::completions());
        out.extend(tasks.iter().map(QueueKey::signals_for));
        out
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_gpu(&self) -> bool {
        self.0 == Self::GPU
    }
}

impl fmt::Display for QueueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One operator of a task pipeline, with its input edge removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OperatorSpec {
    Scan {
        table: String,
        alias: String,
        fields: Vec<Field>,
        filter: Option<Expr>,
    },
    SchemaMap {
        derive: Vec<DerivedColumn>,
    },
    Select {
        predicate: Expr,
    },
    Project {
        items: Vec<ProjectItem>,
    },
    HashJoinPartition {
        key: String,
        buckets: u32,
    },
    HashJoinProbe {
        build_key: String,
        probe_key: String,
    },
}

impl OperatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorSpec::Scan { .. } => "Scan",
            OperatorSpec::SchemaMap { .. } => "SchemaMap",
            OperatorSpec::Select { .. } => "Select",
            OperatorSpec::Project { .. } => "Project",
            OperatorSpec::HashJoinPartition { .. } => "HashJoinPartition",
            OperatorSpec::HashJoinProbe { .. } => "HashJoinProbe",
        }
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorSpec::Scan {
                table,
                alias,
                filter,
                ..
            } => {
                write!(f, "Scan({table} as {alias}")?;
                if let Some(p) = filter {
                    write!(f, " where {p}")?;
                }
                f.write_str(")")
            }
            OperatorSpec::SchemaMap { derive } => {
                let parts: Vec<String> = derive
                    .iter()
                    .map(|d| format!("{}={}({})", d.name, d.udf, d.source))
                    .collect();
                write!(f, "SchemaMap({})", parts.join("; "))
            }
            OperatorSpec::Select { predicate } => write!(f, "Select({predicate})"),
            OperatorSpec::Project { items } => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| format!("{} as {}", i.expr, i.name))
                    .collect();
                write!(f, "Project({})", parts.join("; "))
            }
            OperatorSpec::HashJoinPartition { key, buckets } => {
                write!(f, "HashJoinPartition({key}, buckets={buckets})")
            }
            OperatorSpec::HashJoinProbe {
                build_key,
                probe_key,
            } => write!(f, "HashJoinProbe({build_key} = {probe_key})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinSide {
    Build,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskInput {
    Partition(PartitionRef),
    Cache { key: String, side: Option<JoinSide> },
}

/// Attached to the tasks of a GPU group whose output feeds a hash
/// partition. The worker that completes the last sibling announces that
/// the whole input of `group` is in the cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSignal {
    pub group: usize,
    pub siblings: Vec<String>,
    pub queue: QueueKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMessage {
    pub query_id: String,
    pub task_id: String,
    pub stage: u32,
    pub group: usize,
    pub pipeline: Vec<OperatorSpec>,
    pub inputs: Vec<TaskInput>,
    pub output_key: String,
    pub queue: QueueKey,
    pub depends_on: Vec<String>,
    pub signal: Option<PartitionSignal>,
}

impl TaskMessage {
    /// Cache keys this task writes. A trailing hash partition writes one
    /// entry per bucket, `<output_key>.<b>`.
    pub fn output_keys(&self) -> Vec<String> {
        match self.pipeline.last() {
            Some(OperatorSpec::HashJoinPartition { buckets, .. }) => (0..*buckets)
                .map(|b| format!("{}.{b}", self.output_key))
                .collect(),
            _ => vec![self.output_key.clone()],
        }
    }

    /// `<query>:<task>`, unique across concurrent queries.
    pub fn global_id(&self) -> String {
        format!("{}:{}", self.query_id, self.task_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub query_id: String,
    pub task_id: String,
    pub worker: String,
    pub queue: QueueKey,
    pub ok: bool,
    pub error: Option<String>,
    pub output_keys: Vec<String>,
    pub rows_in: u64,
    pub rows_out: u64,
    /// Modelled duration of the task on the worker that ran it.
    pub virtual_ms: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalMessage {
    /// Always `partition-ready` for now.
    pub name: String,
    pub query_id: String,
    pub group: usize,
    pub keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Task(TaskMessage),
    Completion(Completion),
    Signal(SignalMessage),
}

pub const PARTITION_READY: &str = "partition-ready";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_queue_names() {
        assert_eq!(
            QueueKey::signals_for(&QueueKey::cpu_general()).as_str(),
            "q.signals.q.cpu.general"
        );
        assert_eq!(QueueKey::all().len(), 7);
    }

    #[test]
    fn partition_tasks_write_one_key_per_bucket() {
        let t = TaskMessage {
            query_id: "q1".into(),
            task_id: "t0".into(),
            stage: 1,
            group: 0,
            pipeline: vec![OperatorSpec::HashJoinPartition {
                key: "a.id".into(),
                buckets: 3,
            }],
            inputs: vec![],
            output_key: "q1.stage1.t0".into(),
            queue: QueueKey::cpu_general(),
            depends_on: vec![],
            signal: None,
        };
        assert_eq!(
            t.output_keys(),
            ["q1.stage1.t0.0", "q1.stage1.t0.1", "q1.stage1.t0.2"]
        );
        let json = serde_json::to_string(&Message::Task(t.clone())).unwrap();
        assert_eq!(
            serde_json::from_str::<Message>(&json).unwrap(),
            Message::Task(t)
        );
    }
}
