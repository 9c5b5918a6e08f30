//! Physical planning: data classification, resource assignment,
//! collocation into operator groups, stage numbering, and splitting groups
//! into per-partition tasks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::logical::LogicalPlan;
use crate::catalog::{Catalog, TableKind};
use crate::error::{Error, Result};
use crate::storage::PartitionRef;
use crate::task::{JoinSide, OperatorSpec, PartitionSignal, QueueKey, TaskInput, TaskMessage};
use crate::types::Schema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Processing {
    #[serde(rename = "CPU")]
    Cpu,
    #[serde(rename = "GPU")]
    Gpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Memory {
    M,
    L,
    XL,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Disk {
    #[serde(rename = "STD")]
    Std,
    #[serde(rename = "NVME")]
    Nvme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceSpec {
    pub processing: Processing,
    pub memory: Memory,
    pub disk: Disk,
}

impl ResourceSpec {
    pub const fn new(processing: Processing, memory: Memory, disk: Disk) -> Self {
        ResourceSpec {
            processing,
            memory,
            disk,
        }
    }
}

impl Default for ResourceSpec {
    fn default() -> Self {
        ResourceSpec::new(Processing::Cpu, Memory::M, Disk::Std)
    }
}

impl fmt::Display for ResourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.processing {
            Processing::Cpu => "CPU",
            Processing::Gpu => "GPU",
        };
        let m = match self.memory {
            Memory::M => "M",
            Memory::L => "L",
            Memory::XL => "XL",
        };
        let d = match self.disk {
            Disk::Std => "STD",
            Disk::Nvme => "NVME",
        };
        write!(f, "({p},{m},{d})")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataClass {
    Structured,
    ComplexUdf,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Scan,
    SchemaMap,
    Select,
    Project,
    Join,
    Partition,
}

/// Resource assignment by data class and operator kind. Operators with no
/// specific rule keep the default `(CPU, M, STD)`.
pub fn assign_resources(kind: OpKind, class: DataClass) -> ResourceSpec {
    use Disk::*;
    use Memory::*;
    use Processing::*;
    match class {
        DataClass::ComplexUdf => ResourceSpec::new(Gpu, L, Std),
        DataClass::Other => ResourceSpec::new(Cpu, M, Std),
        DataClass::Structured => match kind {
            OpKind::Join => ResourceSpec::new(Cpu, XL, Nvme),
            OpKind::Project => ResourceSpec::new(Cpu, M, Std),
            OpKind::Select | OpKind::Scan => ResourceSpec::new(Cpu, L, Std),
            OpKind::SchemaMap | OpKind::Partition => ResourceSpec::default(),
        },
    }
}

/// Task queue serving a resource spec.
pub fn queue_for(spec: &ResourceSpec) -> QueueKey {
    match (spec.processing, spec.memory, spec.disk) {
        (Processing::Gpu, _, _) => QueueKey::gpu(),
        (Processing::Cpu, Memory::XL, Disk::Nvme) => QueueKey::cpu_himem(),
        _ => QueueKey::cpu_general(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Capability-routed operators on heterogeneous workers.
    #[default]
    Disaggregated,
    /// Every operator on a general CPU worker.
    Symmetric,
}

impl FromStr for PlanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disaggregated" | "disagg" => Ok(PlanMode::Disaggregated),
            "symmetric" | "sym" => Ok(PlanMode::Symmetric),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected disaggregated or symmetric)"
            ))),
        }
    }
}

impl fmt::Display for PlanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanMode::Disaggregated => "disaggregated",
            PlanMode::Symmetric => "symmetric",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalNode {
    pub id: usize,
    pub op: OperatorSpec,
    pub children: Vec<usize>,
    pub kind: OpKind,
    pub class: DataClass,
    pub resources: ResourceSpec,
    pub group: usize,
}

/// Maximal chain of collocated operators, run as one task per input split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub id: usize,
    /// Node ids, bottom first.
    pub nodes: Vec<usize>,
    pub children: Vec<usize>,
    pub stage: u32,
    pub resources: ResourceSpec,
    pub queue: QueueKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalPlan {
    pub mode: PlanMode,
    pub buckets: u32,
    /// Post-order: children precede parents, build before probe.
    pub nodes: Vec<PhysicalNode>,
    pub root: usize,
    pub groups: Vec<Group>,
    pub output_schema: Schema,
}

impl PhysicalPlan {
    /// Lowers an optimized logical plan and groups its operators.
    pub fn from_logical(
        plan: &LogicalPlan,
        catalog: &Catalog,
        mode: PlanMode,
        buckets: u32,
    ) -> Result<Self> {
        if buckets == 0 {
            return Err(Error::Config("bucket count must be at least 1".into()));
        }
        let mut nodes = Vec::new();
        let root = lower(plan, catalog, buckets, &mut nodes)?;
        // Blob scans take the class of the complex operator they feed.
        for i in 0..nodes.len() {
            if let OperatorSpec::Scan { table, .. } = &nodes[i].op {
                let blob = catalog.table(table).map(|t| t.kind) == Some(TableKind::BlobDirTable);
                if blob {
                    let parent = nodes.iter().find(|n| n.children.contains(&i));
                    nodes[i].class = match parent {
                        Some(p) if p.class == DataClass::ComplexUdf => DataClass::ComplexUdf,
                        _ => DataClass::Other,
                    };
                }
            }
        }
        for n in &mut nodes {
            n.resources = match mode {
                PlanMode::Disaggregated => assign_resources(n.kind, n.class),
                PlanMode::Symmetric => ResourceSpec::default(),
            };
        }
        let mut p = PhysicalPlan {
            mode,
            buckets,
            nodes,
            root,
            groups: Vec::new(),
            output_schema: plan.schema(),
        };
        p.collocate();
        Ok(p)
    }

    /// A node joins its only child's group when their resources match;
    /// probes always start a new group. Stage = 1 + deepest child stage.
    fn collocate(&mut self) {
        self.groups.clear();
        for i in 0..self.nodes.len() {
            let n = &self.nodes[i];
            let merge = match n.children.as_slice() {
                [c] if n.kind != OpKind::Join && self.nodes[*c].resources == n.resources => {
                    Some(self.nodes[*c].group)
                }
                _ => None,
            };
            match merge {
                Some(g) => {
                    self.groups[g].nodes.push(i);
                    self.nodes[i].group = g;
                }
                None => {
                    let id = self.groups.len();
                    let children: Vec<usize> =
                        n.children.iter().map(|c| self.nodes[*c].group).collect();
                    let stage = 1 + children
                        .iter()
                        .map(|g| self.groups[*g].stage)
                        .max()
                        .unwrap_or(0);
                    let resources = n.resources;
                    self.groups.push(Group {
                        id,
                        nodes: vec![i],
                        children,
                        stage,
                        resources,
                        queue: queue_for(&resources),
                    });
                    self.nodes[i].group = id;
                }
            }
        }
    }

    pub fn root_group(&self) -> usize {
        self.nodes[self.root].group
    }

    pub fn group_pipeline(&self, g: usize) -> Vec<OperatorSpec> {
        self.groups[g]
            .nodes
            .iter()
            .map(|n| self.nodes[*n].op.clone())
            .collect()
    }

    /// One line per group, bottom-up.
    pub fn explain(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let ops: Vec<String> = self
                .group_pipeline(g.id)
                .iter()
                .map(|o| o.to_string())
                .collect();
            out.push_str(&format!(
                "stage={} group={} queue={} resources={} pipeline=[{}]\n",
                g.stage,
                g.id,
                g.queue,
                g.resources,
                ops.join(" -> ")
            ));
        }
        out
    }

    /// Splits groups into tasks. `partitions` lists the partitions of every
    /// scanned table.
    pub fn split(
        &self,
        query_id: &str,
        partitions: &BTreeMap<String, Vec<PartitionRef>>,
    ) -> Result<StagedPlan> {
        let root_group = self.root_group();
        let mut tasks: Vec<TaskMessage> = Vec::new();
        let mut groups: Vec<StagedGroup> = Vec::new();
        let mut next = 0usize;
        let mut new_task = |g: &Group, pipeline: Vec<OperatorSpec>, inputs, depends_on| {
            let task_id = format!("t{next}");
            next += 1;
            let output_key = if g.id == root_group {
                format!("{query_id}.final.{task_id}")
            } else {
                format!("{query_id}.stage{}.{task_id}", g.stage)
            };
            TaskMessage {
                query_id: query_id.to_string(),
                task_id,
                stage: g.stage,
                group: g.id,
                pipeline,
                inputs,
                output_key,
                queue: g.queue.clone(),
                depends_on,
                signal: None,
            }
        };

        for g in &self.groups {
            let pipeline = self.group_pipeline(g.id);
            let bottom = &self.nodes[g.nodes[0]];
            let mut ids = Vec::new();
            match &bottom.op {
                OperatorSpec::Scan { table, .. } => {
                    let parts = partitions
                        .get(table)
                        .ok_or_else(|| Error::UnknownTable(table.clone()))?;
                    if parts.is_empty() {
                        let t = new_task(g, pipeline.clone(), vec![], vec![]);
                        ids.push(tasks.len());
                        tasks.push(t);
                    }
                    for p in parts {
                        let t = new_task(
                            g,
                            pipeline.clone(),
                            vec![TaskInput::Partition(p.clone())],
                            vec![],
                        );
                        ids.push(tasks.len());
                        tasks.push(t);
                    }
                }
                OperatorSpec::HashJoinProbe { .. } => {
                    let [bg, pg] = g.children[..] else {
                        return Err(Error::Unsupported("probe without two inputs".into()));
                    };
                    let deps: Vec<String> = groups[bg]
                        .tasks
                        .iter()
                        .chain(&groups[pg].tasks)
                        .map(|i| tasks[*i].task_id.clone())
                        .collect();
                    for b in 0..self.buckets {
                        let mut inputs = Vec::new();
                        for (cg, side) in [(bg, JoinSide::Build), (pg, JoinSide::Probe)] {
                            for i in &groups[cg].tasks {
                                inputs.push(TaskInput::Cache {
                                    key: format!("{}.{b}", tasks[*i].output_key),
                                    side: Some(side),
                                });
                            }
                        }
                        let t = new_task(g, pipeline.clone(), inputs, deps.clone());
                        ids.push(tasks.len());
                        tasks.push(t);
                    }
                }
                _ => {
                    let [cg] = g.children[..] else {
                        return Err(Error::Unsupported(format!(
                            "group {} has {} inputs",
                            g.id,
                            g.children.len()
                        )));
                    };
                    let upstream = groups[cg].tasks.clone();
                    for i in upstream {
                        let input = TaskInput::Cache {
                            key: tasks[i].output_key.clone(),
                            side: None,
                        };
                        let dep = tasks[i].task_id.clone();
                        let t = new_task(g, pipeline.clone(), vec![input], vec![dep]);
                        ids.push(tasks.len());
                        tasks.push(t);
                    }
                }
            }
            // A partition group fed from the GPU waits for the whole upstream
            // group to announce itself before any of its tasks is published.
            let gated = matches!(bottom.op, OperatorSpec::HashJoinPartition { .. })
                && g.children.len() == 1
                && self.groups[g.children[0]].queue.is_gpu();
            if gated {
                let up = &groups[g.children[0]].tasks;
                let siblings: Vec<String> =
                    up.iter().map(|i| tasks[*i].output_key.clone()).collect();
                for i in up.clone() {
                    tasks[i].signal = Some(PartitionSignal {
                        group: g.id,
                        siblings: siblings.clone(),
                        queue: QueueKey::signals_for(&g.queue),
                    });
                }
            }
            groups.push(StagedGroup {
                id: g.id,
                stage: g.stage,
                queue: g.queue.clone(),
                tasks: ids,
                gated,
                root: g.id == root_group,
            });
        }
        let final_keys = groups[root_group]
            .tasks
            .iter()
            .map(|i| tasks[*i].output_key.clone())
            .collect();
        Ok(StagedPlan {
            query_id: query_id.to_string(),
            tasks,
            groups,
            output_schema: self.output_schema.clone(),
            final_keys,
        })
    }
}

fn lower(
    plan: &LogicalPlan,
    catalog: &Catalog,
    buckets: u32,
    nodes: &mut Vec<PhysicalNode>,
) -> Result<usize> {
    let children = plan
        .children()
        .into_iter()
        .map(|c| lower(c, catalog, buckets, nodes))
        .collect::<Result<Vec<_>>>()?;
    let complex = |name: &str| catalog.udf(name).is_some_and(|u| u.is_complex());
    let derived = plan.derived_columns();
    let reads_complex = |e: &crate::expr::Expr| {
        e.udf_calls().into_iter().any(complex)
            || e.columns()
                .iter()
                .any(|c| derived.iter().any(|d| &d.name == c && complex(&d.udf)))
    };
    let class_if = |b: bool| {
        if b {
            DataClass::ComplexUdf
        } else {
            DataClass::Structured
        }
    };
    let (op, kind, class) = match plan {
        LogicalPlan::Scan {
            table,
            alias,
            fields,
            filter,
        } => (
            OperatorSpec::Scan {
                table: table.clone(),
                alias: alias.clone(),
                fields: fields.clone(),
                filter: filter.clone(),
            },
            OpKind::Scan,
            DataClass::Structured,
        ),
        LogicalPlan::SchemaMap { derive, .. } => (
            OperatorSpec::SchemaMap {
                derive: derive.clone(),
            },
            OpKind::SchemaMap,
            class_if(derive.iter().any(|d| complex(&d.udf))),
        ),
        LogicalPlan::Select { predicate, .. } => (
            OperatorSpec::Select {
                predicate: predicate.clone(),
            },
            OpKind::Select,
            class_if(reads_complex(predicate)),
        ),
        LogicalPlan::Project { items, .. } => (
            OperatorSpec::Project {
                items: items.clone(),
            },
            OpKind::Project,
            class_if(
                items
                    .iter()
                    .any(|i| i.expr.udf_calls().into_iter().any(complex)),
            ),
        ),
        LogicalPlan::HashJoinPartition { key, .. } => (
            OperatorSpec::HashJoinPartition {
                key: key.clone(),
                buckets,
            },
            OpKind::Partition,
            DataClass::Structured,
        ),
        LogicalPlan::HashJoinProbe {
            build_key,
            probe_key,
            ..
        } => (
            OperatorSpec::HashJoinProbe {
                build_key: build_key.clone(),
                probe_key: probe_key.clone(),
            },
            OpKind::Join,
            DataClass::Structured,
        ),
        LogicalPlan::Join { .. } => {
            return Err(Error::Unsupported(
                "join must be rewritten to a hash join before physical planning".into(),
            ))
        }
    };
    let id = nodes.len();
    nodes.push(PhysicalNode {
        id,
        op,
        children,
        kind,
        class,
        resources: ResourceSpec::default(),
        group: 0,
    });
    Ok(id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedGroup {
    pub id: usize,
    pub stage: u32,
    pub queue: QueueKey,
    /// Indices into [`StagedPlan::tasks`].
    pub tasks: Vec<usize>,
    /// Waits for a partition-ready signal before publishing.
    pub gated: bool,
    pub root: bool,
}

/// Every task of one query, in publication-compatible order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedPlan {
    pub query_id: String,
    pub tasks: Vec<TaskMessage>,
    pub groups: Vec<StagedGroup>,
    pub output_schema: Schema,
    pub final_keys: Vec<String>,
}

impl StagedPlan {
    pub fn task(&self, task_id: &str) -> Option<&TaskMessage> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}
