//! Domain records shared by every solver stage.
//!
//! Service ids are dense indices `0..ns` into [`Scenario::services`].
//! Configurations are sparse: a machine hosts at most `mem_capacity`
//! services, so only nonzero fractions are stored.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reliability;

/// Relative slack allowed on CPU sums before a machine counts as overfull.
pub const CPU_TOLERANCE: f64 = 1e-9;

/// Absolute slack on covering constraints `sum_c lambda_c x_ic >= n_i`.
pub const COVER_TOLERANCE: f64 = 1e-6;

/// Homogeneous machine type. Capacities are per machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    #[serde(rename = "cpu")]
    pub cpu_capacity: f64,
    /// Service slots per machine.
    #[serde(rename = "mem")]
    pub mem_capacity: usize,
    #[serde(rename = "fail")]
    pub failure_prob: f64,
}

impl Platform {
    pub fn new(cpu_capacity: f64, mem_capacity: usize, failure_prob: f64) -> Result<Self> {
        let p = Platform {
            cpu_capacity,
            mem_capacity,
            failure_prob,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cpu_capacity > 0.0 && self.cpu_capacity.is_finite()) {
            return Err(Error::Input(format!(
                "cpu capacity must be positive, got {}",
                self.cpu_capacity
            )));
        }
        if self.mem_capacity == 0 {
            return Err(Error::Input("memory capacity must be at least 1".into()));
        }
        if !(self.failure_prob > 0.0 && self.failure_prob < 1.0) {
            return Err(Error::Input(format!(
                "failure probability must lie in (0,1), got {}",
                self.failure_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Service {
    /// Total CPU the service needs while alive.
    pub demand: f64,
    /// Maximum tolerated probability of ending the period under `demand`.
    pub reliability: f64,
}

impl Service {
    pub fn validate(&self) -> Result<()> {
        if !(self.demand > 0.0 && self.demand.is_finite()) {
            return Err(Error::Input(format!("demand must be positive, got {}", self.demand)));
        }
        if !(self.reliability > 0.0 && self.reliability < 1.0) {
            return Err(Error::Input(format!(
                "reliability target must lie in (0,1), got {}",
                self.reliability
            )));
        }
        Ok(())
    }
}

/// Gaussian-approximation quantities of a service on a given platform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceDerived {
    /// `d / (1 - f)`.
    pub scaled_demand: f64,
    /// `z_r * sqrt(f / (1 - f))`; negative when `r > 1/2`.
    pub penalty: f64,
}

impl ServiceDerived {
    pub fn new(service: &Service, platform: &Platform) -> Result<Self> {
        Ok(ServiceDerived {
            scaled_demand: reliability::derive_scaled_demand(service.demand, platform.failure_prob)?,
            penalty: reliability::derive_penalty(service.reliability, platform.failure_prob)?,
        })
    }
}

/// Replica count `n_i` and per-replica CPU slice `A_i` for every service.
///
/// Replica counts are fractional when they come straight out of the relaxed
/// solver and integral after binomial refinement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousPlan {
    pub replicas: Vec<f64>,
    pub slices: Vec<f64>,
}

impl HomogeneousPlan {
    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn is_integral(&self) -> bool {
        self.replicas.iter().all(|n| n.fract() == 0.0)
    }

    /// Machines needed if memory and CPU could be pooled across machines.
    pub fn relaxed_machines(&self, platform: &Platform) -> f64 {
        let slots: f64 = self.replicas.iter().sum();
        let cpu: f64 = self.replicas.iter().zip(&self.slices).map(|(n, a)| n * a).sum();
        (slots / platform.mem_capacity as f64).max(cpu / platform.cpu_capacity)
    }
}

/// Per-machine pattern: fraction `x_i` of slice `A_i` given to service `i`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    pub fractions: BTreeMap<usize, f64>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a configuration, dropping zero entries.
    pub fn from_pairs<I: IntoIterator<Item = (usize, f64)>>(pairs: I) -> Self {
        Configuration {
            fractions: pairs.into_iter().filter(|&(_, x)| x != 0.0).collect(),
        }
    }

    pub fn fraction(&self, service: usize) -> f64 {
        self.fractions.get(&service).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.values().all(|&x| x == 0.0)
    }

    /// Number of memory slots used (`sum ceil(x_i)`).
    pub fn slots(&self) -> usize {
        self.fractions.values().filter(|&&x| x > 0.0).count()
    }

    pub fn split_count(&self) -> usize {
        self.fractions.values().filter(|&&x| x > 0.0 && x < 1.0).count()
    }

    pub fn cpu(&self, slices: &[f64]) -> f64 {
        self.fractions.iter().map(|(&i, &x)| x * slices[i]).sum()
    }

    /// Same support and fractions equal within `tol`.
    pub fn approx_eq(&self, other: &Configuration, tol: f64) -> bool {
        let a: Vec<_> = self.fractions.iter().filter(|(_, &x)| x > 0.0).collect();
        let b: Vec<_> = other.fractions.iter().filter(|(_, &x)| x > 0.0).collect();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((i, x), (j, y))| i == j && (*x - *y).abs() <= tol)
    }
}

/// Checks memory, CPU, and the almost-full property of one machine pattern.
pub fn validate_configuration(
    config: &Configuration,
    slices: &[f64],
    platform: &Platform,
) -> Result<bool> {
    for (&i, &x) in &config.fractions {
        if i >= slices.len() {
            return Err(Error::Input(format!(
                "configuration references unknown service {i} (have {})",
                slices.len()
            )));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Input(format!("fraction {x} of service {i} outside [0,1]")));
        }
    }
    let cpu_ok = config.cpu(slices) <= platform.cpu_capacity * (1.0 + CPU_TOLERANCE);
    Ok(config.slots() <= platform.mem_capacity && cpu_ok && config.split_count() <= 1)
}

/// A multiset of configurations with multiplicities `lambda_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub configurations: Vec<Configuration>,
    pub multiplicities: Vec<f64>,
    /// Per-service maximum slice `A_i`.
    pub slices: Vec<f64>,
    /// Per-service replica targets `n_i` the plan has to cover.
    pub replica_targets: Vec<f64>,
}

impl AllocationPlan {
    pub fn machines_used(&self) -> f64 {
        self.multiplicities.iter().sum()
    }

    pub fn is_integral(&self) -> bool {
        self.multiplicities.iter().all(|l| l.fract() == 0.0 && *l >= 0.0)
    }

    pub fn service_count(&self) -> usize {
        self.slices.len()
    }

    /// `sum_c lambda_c x_ic` for every service.
    pub fn coverage(&self) -> Vec<f64> {
        let mut cover = vec![0.0; self.slices.len()];
        for (cfg, &lambda) in self.configurations.iter().zip(&self.multiplicities) {
            for (&i, &x) in &cfg.fractions {
                if let Some(c) = cover.get_mut(i) {
                    *c += lambda * x;
                }
            }
        }
        cover
    }

    /// Structural validation: shapes, configuration validity, covering.
    pub fn validate(&self, platform: &Platform) -> Result<()> {
        if self.configurations.len() != self.multiplicities.len() {
            return Err(Error::Input(format!(
                "{} configurations but {} multiplicities",
                self.configurations.len(),
                self.multiplicities.len()
            )));
        }
        if self.slices.len() != self.replica_targets.len() {
            return Err(Error::Input("slices and replica targets differ in length".into()));
        }
        if let Some(l) = self.multiplicities.iter().find(|l| !(**l >= 0.0)) {
            return Err(Error::Input(format!("negative multiplicity {l}")));
        }
        for (c, cfg) in self.configurations.iter().enumerate() {
            if !validate_configuration(cfg, &self.slices, platform)? {
                return Err(Error::Input(format!("configuration {c} is not valid and almost full")));
            }
        }
        for (i, (cover, target)) in self.coverage().iter().zip(&self.replica_targets).enumerate() {
            if *cover < target - COVER_TOLERANCE {
                return Err(Error::Input(format!(
                    "service {i} covered {cover} times, needs {target}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// CPU granted to each service on one concrete machine.
pub type MachineAssignment = BTreeMap<usize, f64>;

/// Concretizes `lambda_c` copies of each configuration, in configuration order.
pub fn expand_plan(plan: &AllocationPlan) -> Result<Vec<MachineAssignment>> {
    let mut machines = Vec::new();
    for (cfg, &lambda) in plan.configurations.iter().zip(&plan.multiplicities) {
        if lambda.fract() != 0.0 || lambda < 0.0 {
            return Err(Error::Contract(format!(
                "expand_plan needs integral multiplicities, got {lambda}"
            )));
        }
        let machine: MachineAssignment = cfg
            .fractions
            .iter()
            .filter(|(_, &x)| x > 0.0)
            .map(|(&i, &x)| (i, x * plan.slices[i]))
            .collect();
        machines.extend(std::iter::repeat_n(machine, lambda as usize));
    }
    Ok(machines)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub platform: Platform,
    pub services: Vec<Service>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.platform.validate()?;
        if self.services.is_empty() {
            return Err(Error::Input("scenario has no services".into()));
        }
        for (i, s) in self.services.iter().enumerate() {
            s.validate().map_err(|e| Error::Input(format!("service {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn derived(&self) -> Result<Vec<ServiceDerived>> {
        self.services
            .iter()
            .map(|s| ServiceDerived::new(s, &self.platform))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(s)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
