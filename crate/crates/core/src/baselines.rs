//! Exclusive placement: every service gets whole machines to itself.

use crate::error::Result;
use crate::exec::Execution;
use crate::model::{AllocationPlan, Configuration, Scenario};
use crate::reliability::min_replicas_binomial;

/// Dedicates to each service the fewest full machines that meet its target
/// under the exact binomial law. Memory capacity plays no role.
pub fn no_sharing(scenario: &Scenario) -> Result<AllocationPlan> {
    no_sharing_with(scenario, Execution::default())
}

pub fn no_sharing_with(scenario: &Scenario, execution: Execution) -> Result<AllocationPlan> {
    scenario.validate()?;
    let p = &scenario.platform;
    let counts = execution
        .map(&scenario.services, |_, s| {
            min_replicas_binomial(p.cpu_capacity, s.demand, s.reliability, p.failure_prob)
        })
        .into_iter()
        .collect::<Result<Vec<u64>>>()?;
    let ns = scenario.services.len();
    Ok(AllocationPlan {
        configurations: (0..ns).map(|i| Configuration::from_pairs([(i, 1.0)])).collect(),
        multiplicities: counts.iter().map(|&k| k as f64).collect(),
        slices: vec![p.cpu_capacity; ns],
        replica_targets: counts.iter().map(|&k| k as f64).collect(),
    })
}
