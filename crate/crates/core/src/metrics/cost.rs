//! Instance-cost arithmetic in integer micro-dollars.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{PricingTable, WorkerCounts};
use crate::error::{Error, Result};

/// A dollar amount held as whole cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Usd {
    pub cents: i64,
}

impl Usd {
    pub fn dollars(self) -> f64 {
        self.cents as f64 / 100.0
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}.{:02}", self.cents / 100, self.cents % 100)
    }
}

/// Billable minutes for a virtual duration: rounded up to whole minutes.
pub fn billed_minutes(virtual_ms: f64) -> Result<i64> {
    if virtual_ms < 0.0 || virtual_ms.is_nan() {
        return Err(Error::NegativeInput(format!("duration {virtual_ms} ms")));
    }
    // Guard against float noise pushing an exact minute over the boundary.
    let minutes = virtual_ms / 60_000.0;
    let rounded = minutes.round();
    if (minutes - rounded).abs() < 1e-9 {
        return Ok(rounded as i64);
    }
    Ok(minutes.ceil() as i64)
}

/// `sum(minutes * n * rate)` over node types, rounded to cents half-up.
/// Every node in the fleet is billed for the full duration.
pub fn compute_instance_cost(
    minutes: i64,
    counts: &WorkerCounts,
    pricing: &PricingTable,
) -> Result<Usd> {
    if minutes < 0 {
        return Err(Error::NegativeInput(format!("{minutes} minutes")));
    }
    let mut micro: i64 = 0;
    for (node, n) in counts {
        if *n == 0 {
            continue;
        }
        let rate = pricing
            .per_minute
            .get(node)
            .ok_or_else(|| Error::Config(format!("no price for node type {node}")))?;
        if rate.is_nan() || *rate <= 0.0 {
            return Err(Error::Config(format!("price for {node} must be positive")));
        }
        let rate_micro = (rate * 1e6).round() as i64;
        micro += minutes * i64::from(*n) * rate_micro;
    }
    Ok(Usd {
        cents: (micro + 5_000) / 10_000,
    })
}
