//! Packing homogeneous slices onto machines by column generation.
//!
//! The master problem covers every service's replica target with machine
//! configurations at minimum total multiplicity. Only a small pool of
//! configurations is ever materialized: each round solves the restricted
//! master, reads its row prices, and asks the split-knapsack pricer for the
//! configuration of maximum total price. A configuration priced above one
//! machine improves the master; once none exists the fractional optimum is
//! a lower bound on the machine count, and rounding every multiplicity up
//! yields an integral plan.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogeneous::{self, Refinement, RefinementOptions};
use crate::knapsack::{self, SplitKnapsackInstance};
use crate::model::{AllocationPlan, Configuration, HomogeneousPlan, Platform, Scenario, CPU_TOLERANCE};
use crate::simplex::{CoveringLp, LpStatus};

/// Pricing stops once the best configuration is worth at most `1 + PRICING_TOLERANCE`.
pub const PRICING_TOLERANCE: f64 = 1e-7;
/// Multiplicities below this are treated as zero when rounding.
pub const DROP_TOLERANCE: f64 = 1e-9;
const DEDUP_TOLERANCE: f64 = 1e-9;

/// Row prices of the covering constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DualPrices(pub Vec<f64>);

impl DualPrices {
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        if let Some(p) = prices.iter().find(|p| !(**p >= 0.0)) {
            return Err(Error::Input(format!("dual price must be nonnegative, got {p}")));
        }
        Ok(DualPrices(prices))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MasterStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterSolution {
    pub multiplicities: Vec<f64>,
    pub objective: f64,
    pub duals: DualPrices,
    pub status: MasterStatus,
}

/// Next-fit decreasing: services by non-increasing slice fill one open
/// machine at a time; a service that does not fit closes it.
pub fn greedy_initial_configs(plan: &HomogeneousPlan, platform: &Platform) -> Result<Vec<Configuration>> {
    let cap = platform.cpu_capacity;
    if let Some((i, a)) = plan.slices.iter().enumerate().find(|(_, a)| **a > cap * (1.0 + CPU_TOLERANCE)) {
        return Err(Error::Contract(format!("service {i} has slice {a} above machine capacity {cap}")));
    }
    let mut order: Vec<usize> = (0..plan.len()).collect();
    order.sort_by(|&a, &b| plan.slices[b].total_cmp(&plan.slices[a]).then(a.cmp(&b)));

    let mut configs = Vec::new();
    let mut open = Configuration::new();
    let mut used = 0.0;
    for i in order {
        let a = plan.slices[i];
        let fits = open.slots() < platform.mem_capacity && used + a <= cap * (1.0 + CPU_TOLERANCE);
        if !fits && !open.is_empty() {
            configs.push(std::mem::take(&mut open));
            used = 0.0;
        }
        open.fractions.insert(i, 1.0);
        used += a;
    }
    if !open.is_empty() {
        configs.push(open);
    }
    Ok(configs)
}

fn column_entries(config: &Configuration) -> Vec<(usize, f64)> {
    config.fractions.iter().filter(|(_, &x)| x > 0.0).map(|(&i, &x)| (i, x)).collect()
}

/// Restricted master LP that keeps its basis between column additions.
#[derive(Debug, Clone)]
pub struct RestrictedMaster {
    lp: CoveringLp,
    configs: Vec<Configuration>,
}

impl RestrictedMaster {
    pub fn new(targets: &[f64]) -> Result<Self> {
        Ok(RestrictedMaster {
            lp: CoveringLp::new(targets.to_vec())?,
            configs: Vec::new(),
        })
    }

    pub fn configurations(&self) -> &[Configuration] {
        &self.configs
    }

    pub fn add(&mut self, config: Configuration) -> Result<()> {
        self.lp.add_column(column_entries(&config), 1.0)?;
        self.configs.push(config);
        Ok(())
    }

    pub fn contains(&self, config: &Configuration) -> bool {
        self.configs.iter().any(|c| c.approx_eq(config, DEDUP_TOLERANCE))
    }

    pub fn solve(&mut self) -> Result<MasterSolution> {
        let sol = self.lp.solve()?;
        let status = match sol.status {
            LpStatus::Optimal => MasterStatus::Optimal,
            LpStatus::Infeasible => MasterStatus::Infeasible,
            LpStatus::IterationLimit => {
                return Err(Error::Internal("restricted master hit its pivot limit".into()))
            }
        };
        Ok(MasterSolution {
            multiplicities: sol.primal,
            objective: sol.objective,
            duals: DualPrices(sol.duals),
            status,
        })
    }
}

/// Solves the covering LP over a fixed configuration set from scratch.
pub fn solve_master(configs: &[Configuration], targets: &[f64]) -> Result<MasterSolution> {
    let mut master = RestrictedMaster::new(targets)?;
    for c in configs {
        if let Some(&i) = c.fractions.keys().find(|&&i| i >= targets.len()) {
            return Err(Error::Input(format!("configuration refers to unknown service {i}")));
        }
        master.add(c.clone())?;
    }
    master.solve()
}

/// Configuration of maximum total price, and that price.
pub fn price_configuration(
    duals: &DualPrices,
    slices: &[f64],
    platform: &Platform,
    resolution: usize,
) -> Result<(f64, Configuration)> {
    if duals.0.len() != slices.len() {
        return Err(Error::Input("duals and slices differ in length".into()));
    }
    let instance = SplitKnapsackInstance {
        sizes: slices.to_vec(),
        profits: duals.0.clone(),
        capacity: platform.cpu_capacity,
        max_items: platform.mem_capacity,
    };
    let sol = knapsack::solve_dp(&instance, resolution)?;
    let config = Configuration::from_pairs(
        sol.weights.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(i, &x)| (i, x)),
    );
    Ok((sol.profit, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColgenOptions {
    pub resolution: usize,
    /// Defaults to `10 ns + 100` pricing rounds.
    pub iteration_cap: Option<usize>,
}

impl Default for ColgenOptions {
    fn default() -> Self {
        ColgenOptions {
            resolution: knapsack::DEFAULT_RESOLUTION,
            iteration_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnGeneration {
    /// Fractional plan over the configurations with positive multiplicity.
    pub plan: AllocationPlan,
    pub objective: f64,
    /// Every configuration ever added to the master.
    pub pool: Vec<Configuration>,
    pub iterations: usize,
    /// Last pricing profit; at most `1 + PRICING_TOLERANCE` when `optimal`.
    pub last_profit: f64,
    pub optimal: bool,
}

/// Column generation from the greedy seed until no configuration prices above one.
pub fn column_generation(plan: &HomogeneousPlan, platform: &Platform, options: ColgenOptions) -> Result<ColumnGeneration> {
    platform.validate()?;
    if !plan.is_integral() {
        return Err(Error::Contract("column generation needs integral replica targets".into()));
    }
    let ns = plan.len();
    let cap = options.iteration_cap.unwrap_or(10 * ns + 100);
    let mut master = RestrictedMaster::new(&plan.replicas)?;
    for c in greedy_initial_configs(plan, platform)? {
        master.add(c)?;
    }

    let mut iterations = 0;
    let mut optimal = false;
    let mut last_profit = f64::INFINITY;
    let mut sol = master.solve()?;
    loop {
        if sol.status != MasterStatus::Optimal {
            return Err(Error::Internal("greedy seed does not cover the replica targets".into()));
        }
        if iterations >= cap {
            break;
        }
        iterations += 1;
        let (profit, config) = price_configuration(&sol.duals, &plan.slices, platform, options.resolution)?;
        last_profit = profit;
        debug!("colgen iteration {iterations}: objective {:.9}, pricing profit {profit:.9}", sol.objective);
        if profit <= 1.0 + PRICING_TOLERANCE {
            optimal = true;
            break;
        }
        if master.contains(&config) {
            debug!("colgen iteration {iterations}: priced configuration already in the pool");
            break;
        }
        master.add(config)?;
        sol = master.solve()?;
    }

    let (configurations, multiplicities): (Vec<_>, Vec<_>) = master
        .configurations()
        .iter()
        .zip(&sol.multiplicities)
        .filter(|(_, &l)| l > 0.0)
        .map(|(c, &l)| (c.clone(), l))
        .unzip();
    Ok(ColumnGeneration {
        plan: AllocationPlan {
            configurations,
            multiplicities,
            slices: plan.slices.clone(),
            replica_targets: plan.replicas.clone(),
        },
        objective: sol.objective,
        pool: master.configurations().to_vec(),
        iterations,
        last_profit,
        optimal,
    })
}

/// Rounds every multiplicity up, dropping near-zero ones and snapping
/// values within rounding noise of an integer.
pub fn round_plan(fractional: &AllocationPlan) -> Result<AllocationPlan> {
    let mut configurations = Vec::new();
    let mut multiplicities = Vec::new();
    for (c, &l) in fractional.configurations.iter().zip(&fractional.multiplicities) {
        if !(l >= 0.0) {
            return Err(Error::Input(format!("negative multiplicity {l}")));
        }
        if l < DROP_TOLERANCE {
            continue;
        }
        let near = l.round();
        let rounded = if (l - near).abs() <= DROP_TOLERANCE { near } else { l.ceil() };
        configurations.push(c.clone());
        multiplicities.push(rounded);
    }
    let plan = AllocationPlan {
        configurations,
        multiplicities,
        slices: fractional.slices.clone(),
        replica_targets: fractional.replica_targets.clone(),
    };
    for (i, (cover, target)) in plan.coverage().iter().zip(&plan.replica_targets).enumerate() {
        if *cover < target - crate::model::COVER_TOLERANCE {
            return Err(Error::Internal(format!("rounding left service {i} covered {cover} < {target}")));
        }
    }
    Ok(plan)
}

/// Outcome of the full pipeline: sizing, packing, rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColgenRun {
    pub refinement: Refinement,
    pub packing: ColumnGeneration,
    pub rounded: AllocationPlan,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub refinement: RefinementOptions,
    pub colgen: ColgenOptions,
}

/// Sizes every service, packs the slices, and rounds the packing.
pub fn solve_scenario(scenario: &Scenario, options: PipelineOptions) -> Result<ColgenRun> {
    scenario.validate()?;
    let refinement = homogeneous::refine_with(&scenario.services, &scenario.platform, &options.refinement)?;
    let packing = column_generation(&refinement.plan, &scenario.platform, options.colgen)?;
    let rounded = round_plan(&packing.plan)?;
    Ok(ColgenRun {
        refinement,
        packing,
        rounded,
    })
}
