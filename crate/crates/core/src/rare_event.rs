//! Failure probability of a service under an arbitrary plan, by adaptive
//! multilevel splitting.
//!
//! A service placed on `lambda_c` machines of configuration `c`, with CPU
//! `a_c` on each, keeps `sum_c a_c X_c` alive where `X_c ~ Bin(lambda_c, 1-f)`
//! independently. The estimator walks a decreasing ladder of thresholds down
//! to the demand `d`. At each rung it keeps the sample vectors whose alive CPU
//! lies below the new threshold, records their fraction, redraws `N` vectors
//! from the survivors with replacement, and moves every vector by one Gibbs
//! sweep of the law conditioned on staying below the threshold. The product
//! of the recorded fractions estimates `P(sum_c a_c X_c < d)`.
//!
//! Every vector at every level draws from its own seed-derived stream, so an
//! estimate depends on the seed only, not on how the work was scheduled.

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{AllocationPlan, Scenario};
use crate::reliability;
use crate::rng::{derive_seed, substream, StreamRng};

pub const DEFAULT_SAMPLE_SIZE: usize = 1000;
pub const DEFAULT_LEVEL_FRACTION: f64 = 0.10;
pub const MIN_SAMPLE_SIZE: usize = 100;
/// Early stopping passes a service once the running estimate is this many
/// times below its target.
pub const EARLY_STOP_MARGIN: f64 = 10.0;
const MAX_LEVELS: usize = 100_000;
/// Below this truncated mass the sampler switches to log-space weights.
const LINEAR_MASS_FLOOR: f64 = 1e-280;

/// Where a service lives: `slices[c]` CPU on each of `machines[c]` machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceExposure {
    pub slices: Vec<f64>,
    pub machines: Vec<u64>,
}

impl ServiceExposure {
    pub fn new(slices: Vec<f64>, machines: Vec<u64>) -> Result<Self> {
        if slices.len() != machines.len() {
            return Err(Error::Input("exposure slices and machine counts differ in length".into()));
        }
        if let Some(a) = slices.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::Input(format!("exposure slice must be positive, got {a}")));
        }
        if machines.contains(&0) {
            return Err(Error::Input("exposure machine count must be at least 1".into()));
        }
        Ok(ServiceExposure { slices, machines })
    }

    /// Exposure of `service` in an integral plan. Configurations granting the
    /// same CPU are merged, since a sum of binomials with a shared success
    /// probability is again binomial.
    pub fn from_plan(plan: &AllocationPlan, service: usize) -> Result<Self> {
        if service >= plan.service_count() {
            return Err(Error::Input(format!("plan has no service {service}")));
        }
        let mut slices: Vec<f64> = Vec::new();
        let mut machines: Vec<u64> = Vec::new();
        for (cfg, &lambda) in plan.configurations.iter().zip(&plan.multiplicities) {
            if lambda.fract() != 0.0 || lambda < 0.0 {
                return Err(Error::Contract(format!("exposure needs integral multiplicities, got {lambda}")));
            }
            let x = cfg.fraction(service);
            if x <= 0.0 || lambda == 0.0 {
                continue;
            }
            let a = x * plan.slices[service];
            match slices.iter().position(|&s| s == a) {
                Some(c) => machines[c] += lambda as u64,
                None => {
                    slices.push(a);
                    machines.push(lambda as u64);
                }
            }
        }
        Ok(ServiceExposure { slices, machines })
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// CPU alive when no machine fails.
    pub fn total(&self) -> f64 {
        alive_cpu(&self.slices, &self.machines)
    }
}

/// `sum_c a_c X_c`, always accumulated in configuration order so that equal
/// vectors give bitwise-equal sums.
fn alive_cpu(slices: &[f64], alive: &[u64]) -> f64 {
    slices.iter().zip(alive).map(|(a, &x)| a * x as f64).sum()
}

/// Inverse-CDF sampler for `Bin(n, p)` truncated to `{k < u}`.
#[derive(Debug, Clone)]
pub struct BinomialSampler {
    trials: u64,
    success_prob: f64,
    cdf: Vec<f64>,
}

impl BinomialSampler {
    pub fn new(trials: u64, success_prob: f64) -> Result<Self> {
        let spec = reliability::BinomialSpec::new(trials, success_prob)?;
        let mut acc = 0.0;
        let cdf = (0..=trials)
            .map(|k| {
                acc += spec.pmf(k);
                acc
            })
            .collect();
        Ok(BinomialSampler {
            trials,
            success_prob,
            cdf,
        })
    }

    /// Draw conditioned on the result being strictly below `strict_upper`.
    pub fn sample_below<R: Rng + ?Sized>(&self, strict_upper: i64, rng: &mut R) -> Result<u64> {
        if strict_upper <= 0 {
            return Err(Error::Domain(format!(
                "truncated binomial conditioned on k < {strict_upper} is impossible"
            )));
        }
        let top = (strict_upper as u64 - 1).min(self.trials) as usize;
        if top == 0 {
            return Ok(0);
        }
        let mass = self.cdf[top];
        if mass >= LINEAR_MASS_FLOOR {
            let target = rng.random::<f64>() * mass;
            let k = self.cdf[..=top].partition_point(|&c| c <= target);
            return Ok(k.min(top) as u64);
        }
        // Deep truncation: the linear-scale table underflows, weight in logs.
        let logs: Vec<f64> = (0..=top as u64)
            .map(|k| reliability::binomial_ln_pmf(k, self.trials, self.success_prob))
            .collect();
        let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        for (k, w) in weights.iter().enumerate() {
            if target < *w {
                return Ok(k as u64);
            }
            target -= w;
        }
        Ok(top as u64)
    }
}

/// One draw of `Bin(trials, success_prob)` conditioned on `k < strict_upper`.
pub fn sample_truncated_binomial<R: Rng + ?Sized>(
    trials: u64,
    success_prob: f64,
    strict_upper: i64,
    rng: &mut R,
) -> Result<u64> {
    BinomialSampler::new(trials, success_prob)?.sample_below(strict_upper, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVector {
    pub alive: Vec<u64>,
    pub alive_cpu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelState {
    pub sample: Vec<SampleVector>,
    pub threshold: f64,
    pub estimate: f64,
    pub level: usize,
    pub thresholds: Vec<f64>,
}

/// Exposure plus per-configuration samplers, built once per estimate.
struct Model<'a> {
    exposure: &'a ServiceExposure,
    samplers: Vec<BinomialSampler>,
}

impl<'a> Model<'a> {
    fn new(exposure: &'a ServiceExposure, failure_prob: f64) -> Result<Self> {
        let samplers = exposure
            .machines
            .iter()
            .map(|&m| BinomialSampler::new(m, 1.0 - failure_prob))
            .collect::<Result<_>>()?;
        Ok(Model { exposure, samplers })
    }

    fn draw(&self, rng: &mut StreamRng) -> Result<SampleVector> {
        let alive = self
            .samplers
            .iter()
            .map(|s| s.sample_below(i64::MAX, rng))
            .collect::<Result<Vec<_>>>()?;
        let alive_cpu = alive_cpu(&self.exposure.slices, &alive);
        Ok(SampleVector { alive, alive_cpu })
    }

    /// One Gibbs sweep of the law conditioned on `alive_cpu < threshold`.
    fn sweep(&self, v: &mut SampleVector, threshold: f64, rng: &mut StreamRng) -> Result<()> {
        let slices = &self.exposure.slices;
        for c in 0..slices.len() {
            let below = |alive: &mut Vec<u64>, k: u64| {
                let old = alive[c];
                alive[c] = k;
                let s = alive_cpu(slices, alive);
                alive[c] = old;
                s < threshold
            };
            let rest = v.alive_cpu - slices[c] * v.alive[c] as f64;
            let guess = ((threshold - rest) / slices[c]).ceil();
            let mut u = if guess.is_finite() {
                guess.clamp(1.0, self.exposure.machines[c] as f64 + 1.0) as u64
            } else {
                self.exposure.machines[c] + 1
            };
            // Smallest u with alive_cpu(X_c = u) >= threshold, judged on the exact sum.
            while u > 1 && !below(&mut v.alive, u - 1) {
                u -= 1;
            }
            while u <= self.exposure.machines[c] && below(&mut v.alive, u) {
                u += 1;
            }
            v.alive[c] = self.samplers[c].sample_below(u as i64, rng)?;
            v.alive_cpu = alive_cpu(slices, &v.alive);
        }
        if !(v.alive_cpu < threshold) {
            return Err(Error::Internal(format!(
                "Gibbs sweep left alive CPU {} at threshold {threshold}",
                v.alive_cpu
            )));
        }
        Ok(())
    }
}

/// Applies one conditional Gibbs sweep to every vector of `state` at `threshold`.
/// Vector `v` draws from the stream `(seed, level, v)`.
pub fn resample(
    state: &LevelState,
    threshold: f64,
    exposure: &ServiceExposure,
    failure_prob: f64,
    seed: u64,
    execution: Execution,
) -> Result<LevelState> {
    let model = Model::new(exposure, failure_prob)?;
    let mut next = state.clone();
    next.sample = resample_vectors(&model, &state.sample, threshold, seed, state.level, execution)?;
    next.threshold = threshold;
    Ok(next)
}

fn resample_vectors(
    model: &Model<'_>,
    sample: &[SampleVector],
    threshold: f64,
    seed: u64,
    level: usize,
    execution: Execution,
) -> Result<Vec<SampleVector>> {
    if let Some(v) = sample.iter().find(|v| !(v.alive_cpu < threshold)) {
        return Err(Error::Contract(format!(
            "resample needs every vector below {threshold}, found {}",
            v.alive_cpu
        )));
    }
    execution
        .map(sample, |idx, v| {
            let mut v = v.clone();
            let mut rng = substream(seed, &[level as u64, idx as u64]);
            model.sweep(&mut v, threshold, &mut rng).map(|_| v)
        })
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub sample_size: usize,
    pub level_fraction: f64,
    /// Stop as soon as the running estimate falls below `target / 10`.
    pub early_stop_target: Option<f64>,
    pub execution: Execution,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            sample_size: DEFAULT_SAMPLE_SIZE,
            level_fraction: DEFAULT_LEVEL_FRACTION,
            early_stop_target: None,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub probability: f64,
    pub levels: usize,
    /// Thresholds used, strictly decreasing; ends at the demand unless stopped early.
    pub thresholds: Vec<f64>,
    pub stopped_early: bool,
}

impl Estimate {
    fn trivial(probability: f64) -> Self {
        Estimate {
            probability,
            levels: 0,
            thresholds: Vec::new(),
            stopped_early: false,
        }
    }
}

/// Next threshold: the smallest observed value with more than
/// `fraction * N` of the sample strictly below it, clamped at `demand`.
/// When the sample piles onto one atom no such value exists; the atom
/// itself is used and the level keeps less than the nominal fraction.
fn next_threshold(sorted: &[f64], fraction: f64, demand: f64) -> f64 {
    let n = sorted.len();
    let k = ((fraction * n as f64).floor() as usize).min(n - 1);
    let pivot = sorted[k];
    let above = sorted.partition_point(|&v| v <= pivot);
    let t = if above < n { sorted[above] } else { pivot };
    t.max(demand)
}

/// Estimate of `P(sum_c a_c X_c < demand)` with `X_c ~ Bin(lambda_c, 1-f)`.
pub fn reliability_estimate(
    exposure: &ServiceExposure,
    demand: f64,
    failure_prob: f64,
    seed: u64,
    options: &EstimatorOptions,
) -> Result<Estimate> {
    let n = options.sample_size;
    if n < MIN_SAMPLE_SIZE {
        return Err(Error::Input(format!("sample size must be at least {MIN_SAMPLE_SIZE}, got {n}")));
    }
    if !(options.level_fraction > 0.0 && options.level_fraction < 1.0) {
        return Err(Error::Input(format!("level fraction must lie in (0,1), got {}", options.level_fraction)));
    }
    if exposure.is_empty() {
        return Err(Error::Input("exposure has no configuration".into()));
    }
    if !(demand > 0.0) {
        return Ok(Estimate::trivial(0.0));
    }
    if demand > exposure.total() {
        return Ok(Estimate::trivial(1.0));
    }
    let demand = reliability::failure_level(demand);
    let model = Model::new(exposure, failure_prob)?;
    let seeds: Vec<u64> = (0..n as u64).collect();
    let mut sample = options
        .execution
        .map(&seeds, |_, &v| model.draw(&mut substream(seed, &[0, v])))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut estimate = 1.0;
    let mut thresholds = Vec::new();
    for level in 1..=MAX_LEVELS {
        let mut sorted: Vec<f64> = sample.iter().map(|v| v.alive_cpu).collect();
        sorted.sort_by(f64::total_cmp);
        let threshold = next_threshold(&sorted, options.level_fraction, demand);
        let survivors: Vec<&SampleVector> = sample.iter().filter(|v| v.alive_cpu < threshold).collect();
        estimate *= survivors.len() as f64 / n as f64;
        thresholds.push(threshold);
        if survivors.is_empty() || threshold <= demand {
            return Ok(Estimate {
                probability: estimate,
                levels: level,
                thresholds,
                stopped_early: false,
            });
        }
        if let Some(target) = options.early_stop_target {
            if estimate < target / EARLY_STOP_MARGIN {
                return Ok(Estimate {
                    probability: estimate,
                    levels: level,
                    thresholds,
                    stopped_early: true,
                });
            }
        }
        let mut rng = substream(seed, &[level as u64, u64::MAX]);
        let boot: Vec<SampleVector> = (0..n)
            .map(|_| (*survivors.choose(&mut rng).expect("survivors are non-empty")).clone())
            .collect();
        sample = resample_vectors(&model, &boot, threshold, seed, level, options.execution)?;
    }
    Err(Error::Internal(format!("splitting did not reach the demand within {MAX_LEVELS} levels")))
}

/// Exact `P(a Bin(lambda, 1-f) < d)`.
pub fn exact_failure_single_config(machines: u64, slice: f64, demand: f64, failure_prob: f64) -> f64 {
    reliability::homogeneous_failure_prob(machines, slice, demand, failure_prob)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    Full,
    EarlyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Exact,
    Splitting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceReport {
    pub service: usize,
    pub target: f64,
    pub estimate: f64,
    pub levels: usize,
    pub wall_time_ms: f64,
    pub method: EstimateMethod,
    pub stopped_early: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub services: Vec<ServiceReport>,
}

impl ReliabilityReport {
    pub fn all_pass(&self) -> bool {
        self.services.iter().all(|s| s.verdict == Verdict::Pass)
    }

    /// `max_i (estimate_i - r_i) / r_i`; negative when every service passes.
    pub fn max_relative_violation(&self) -> f64 {
        self.services
            .iter()
            .map(|s| (s.estimate - s.target) / s.target)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-service failure estimates of an integral plan against the scenario targets.
/// Services held by a single block of identical machines use the exact law.
pub fn validate_plan_reliability(
    plan: &AllocationPlan,
    scenario: &Scenario,
    sample_size: usize,
    mode: ValidationMode,
    execution: Execution,
) -> Result<ReliabilityReport> {
    if plan.service_count() != scenario.services.len() {
        return Err(Error::Input(format!(
            "plan covers {} services, scenario has {}",
            plan.service_count(),
            scenario.services.len()
        )));
    }
    let f = scenario.platform.failure_prob;
    let services: Vec<usize> = (0..scenario.services.len()).collect();
    // Services fan out here, so each estimate runs its vectors sequentially.
    let inner = if execution.is_parallel() { Execution::Sequential } else { execution };
    let reports = execution.map(&services, |_, &i| -> Result<ServiceReport> {
        let start = Instant::now();
        let svc = &scenario.services[i];
        let exposure = ServiceExposure::from_plan(plan, i)?;
        let (estimate, method) = match exposure.len() {
            0 => (Estimate::trivial(1.0), EstimateMethod::Exact),
            1 => (
                Estimate::trivial(exact_failure_single_config(
                    exposure.machines[0],
                    exposure.slices[0],
                    svc.demand,
                    f,
                )),
                EstimateMethod::Exact,
            ),
            _ => {
                let options = EstimatorOptions {
                    sample_size,
                    early_stop_target: (mode == ValidationMode::EarlyStop).then_some(svc.reliability),
                    execution: inner,
                    ..EstimatorOptions::default()
                };
                let seed = derive_seed(scenario.seed, &[0x5e_4f1ce, i as u64]);
                (reliability_estimate(&exposure, svc.demand, f, seed, &options)?, EstimateMethod::Splitting)
            }
        };
        let verdict = if estimate.probability < svc.reliability { Verdict::Pass } else { Verdict::Fail };
        Ok(ServiceReport {
            service: i,
            target: svc.reliability,
            estimate: estimate.probability,
            levels: estimate.levels,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            method,
            stopped_early: estimate.stopped_early,
            verdict,
        })
    });
    Ok(ReliabilityReport {
        services: reports.into_iter().collect::<Result<_>>()?,
    })
}
