//! Cost, virtual makespan, run reports and benchmark suites.

pub mod bench;
pub mod cost;
pub mod makespan;
pub mod report;

pub use bench::{default_configs, run_benchmark, BenchConfig, BenchOutcome, BenchRow, Suite};
pub use cost::{billed_minutes, compute_instance_cost, Usd};
pub use makespan::{simulate, virtual_makespan, Schedule, SimTask};
pub use report::{build_report, RunReport};
