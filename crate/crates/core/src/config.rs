//! Cluster configuration: worker counts, bucket count, virtual operator
//! costs, and pricing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::QueueKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    General,
    Himem,
    Gpu,
}

impl NodeType {
    pub const ALL: [NodeType; 3] = [NodeType::General, NodeType::Himem, NodeType::Gpu];

    pub fn name(self) -> &'static str {
        match self {
            NodeType::General => "general",
            NodeType::Himem => "himem",
            NodeType::Gpu => "gpu",
        }
    }

    /// Task queues a node of this type serves, primary first. A node also
    /// serves the queues of every weaker node type.
    pub fn queues(self) -> Vec<QueueKey> {
        match self {
            NodeType::General => vec![QueueKey::cpu_general()],
            NodeType::Himem => vec![QueueKey::cpu_himem(), QueueKey::cpu_general()],
            NodeType::Gpu => vec![
                QueueKey::gpu(),
                QueueKey::cpu_himem(),
                QueueKey::cpu_general(),
            ],
        }
    }

    pub fn primary_queue(self) -> QueueKey {
        self.queues().remove(0)
    }

    pub fn serves(self, queue: &QueueKey) -> bool {
        self.queues().contains(queue)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NodeType {
    type Err = Error;

    /// Accepts `cpu` as an alias for `general`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" | "cpu" => Ok(NodeType::General),
            "himem" => Ok(NodeType::Himem),
            "gpu" => Ok(NodeType::Gpu),
            other => Err(Error::Config(format!("unknown node type {other:?}"))),
        }
    }
}

pub type WorkerCounts = BTreeMap<NodeType, u32>;

/// Parses `general=8,gpu=2` (also `cpu:8 gpu:2`).
pub fn parse_worker_counts(s: &str) -> Result<WorkerCounts> {
    let mut out = WorkerCounts::new();
    for part in s.split([',', ' ']).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once(['=', ':'])
            .ok_or_else(|| Error::Config(format!("expected type=count, got {part:?}")))?;
        let n: u32 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad worker count {v:?}")))?;
        *out.entry(k.trim().parse()?).or_default() += n;
    }
    Ok(out)
}

pub fn format_worker_counts(c: &WorkerCounts) -> String {
    c.iter()
        .filter(|(_, n)| **n > 0)
        .map(|(t, n)| format!("{t}={n}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Virtual milliseconds charged per row by each non-UDF operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VirtualCosts {
    pub scan_row: f64,
    pub select_row: f64,
    pub project_row: f64,
    pub partition_row: f64,
    pub probe_row: f64,
    pub task_overhead: f64,
}

impl Default for VirtualCosts {
    fn default() -> Self {
        VirtualCosts {
            scan_row: 1.0,
            select_row: 0.1,
            project_row: 0.1,
            partition_row: 0.5,
            probe_row: 1.0,
            task_overhead: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingTable {
    /// Dollars per minute by node type.
    pub per_minute: BTreeMap<NodeType, f64>,
}

impl Default for PricingTable {
    /// r5ad.2xlarge-class CPU nodes at $0.0087/min, p3.2xlarge-class GPU
    /// nodes at $0.051/min.
    fn default() -> Self {
        PricingTable {
            per_minute: BTreeMap::from([
                (NodeType::General, 0.0087),
                (NodeType::Himem, 0.0087),
                (NodeType::Gpu, 0.051),
            ]),
        }
    }
}

impl PricingTable {
    pub fn validate(&self) -> Result<()> {
        for (t, r) in &self.per_minute {
            if !(r.is_finite() && *r > 0.0) {
                return Err(Error::Config(format!("price for {t} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub workers: WorkerCounts,
    pub buckets: u32,
    pub virtual_costs: VirtualCosts,
    pub pricing: PricingTable,
    pub cache_capacity_bytes: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            workers: BTreeMap::from([
                (NodeType::General, 2),
                (NodeType::Himem, 1),
                (NodeType::Gpu, 1),
            ]),
            buckets: 4,
            virtual_costs: VirtualCosts::default(),
            pricing: PricingTable::default(),
            cache_capacity_bytes: crate::cache::DEFAULT_CAPACITY,
        }
    }
}

impl ClusterConfig {
    pub fn with_workers(workers: WorkerCounts) -> Self {
        ClusterConfig {
            workers,
            ..Self::default()
        }
    }

    /// Reads TOML when the file ends in `.toml`, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: ClusterConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)?
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.buckets == 0 {
            return Err(Error::Config("buckets must be at least 1".into()));
        }
        if self.workers.values().all(|n| *n == 0) {
            return Err(Error::Config("cluster has no workers".into()));
        }
        let v = &self.virtual_costs;
        for (name, x) in [
            ("scan_row", v.scan_row),
            ("select_row", v.select_row),
            ("project_row", v.project_row),
            ("partition_row", v.partition_row),
            ("probe_row", v.probe_row),
            ("task_overhead", v.task_overhead),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Config(format!("virtual cost {name} must be >= 0")));
            }
        }
        self.pricing.validate()
    }

    pub fn total_workers(&self) -> u32 {
        self.workers.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let c: ClusterConfig = serde_json::from_str(
            r#"{"workers":{"general":8,"gpu":2},"buckets":4,
                "virtual_costs":{"scan_row":2.0},
                "pricing":{"per_minute":{"general":0.0087,"gpu":0.051}}}"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.workers[&NodeType::Gpu], 2);
        assert_eq!(c.virtual_costs.scan_row, 2.0);
        assert_eq!(c.virtual_costs.probe_row, 1.0);
        assert!(serde_json::from_str::<ClusterConfig>(r#"{"workers":{"tpu":1}}"#).is_err());
    }

    #[test]
    fn worker_count_strings() {
        let c = parse_worker_counts("cpu:8 gpu:2").unwrap();
        assert_eq!(format_worker_counts(&c), "general=8,gpu=2");
        assert!(parse_worker_counts("general").is_err());
    }

    #[test]
    fn capability_dominance() {
        assert!(NodeType::Gpu.serves(&QueueKey::cpu_general()));
        assert!(!NodeType::General.serves(&QueueKey::gpu()));
        assert_eq!(NodeType::Himem.primary_queue(), QueueKey::cpu_himem());
    }
}
