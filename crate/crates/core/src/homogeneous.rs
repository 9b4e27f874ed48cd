//! Optimal homogeneous sizing under the Gaussian approximation, and the
//! fixed-point loop that corrects it against the exact binomial law.
//!
//! With memory and CPU pooled across machines, an optimal allocation gives
//! each service `n_i` equal slices `A_i`, and at the optimum the derivatives
//! of `f2(n) = sum_i K_i / (1 - B_i / sqrt(n_i))` agree across services.
//! Calling their common value `X < 0`, each `sqrt(n_i)` is the unique root
//! above `B_i` of `x (x - B_i)^2 = -B_i K_i / X`, and `X` itself is the
//! unique root of the aggregate balance
//! `sum_i n_i(X) = (M/C) sum_i K_i / (1 - B_i / sqrt(n_i(X)))`.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HomogeneousPlan, Platform, Service, ServiceDerived};
use crate::reliability;

/// Penalties at or below zero (targets `r >= 1/2`) are lifted to this value.
pub const PENALTY_FLOOR: f64 = 1e-6;

pub const DEFAULT_EPSILON: f64 = 1e-6;

pub const DEFAULT_ITERATION_CAP: usize = 50;

const BALANCE_TOLERANCE: f64 = 1e-12;

/// Common derivative of `f2` at the optimum; always negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct BalanceMultiplier(f64);

impl BalanceMultiplier {
    pub fn new(value: f64) -> Result<Self> {
        if value < 0.0 && value.is_finite() {
            Ok(BalanceMultiplier(value))
        } else {
            Err(Error::Domain(format!("balance multiplier must be negative, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Root bracket `[max(B, t^(1/3)), B + t^(1/3)]` for `x (x - B)^2 = t`.
pub fn cubic_bracket(penalty: f64, target: f64) -> (f64, f64) {
    let c = target.cbrt();
    (penalty.max(c), penalty + c)
}

/// `g(X)`: the replica count `n = x^2` where `x > B` solves
/// `x (x - B)^2 + B K / X = 0`.
pub fn g_of_x(penalty: f64, scaled_demand: f64, multiplier: f64) -> Result<f64> {
    if !(penalty > 0.0) {
        return Err(Error::Domain(format!("g(X) needs a positive penalty, got {penalty}")));
    }
    if !(scaled_demand > 0.0) {
        return Err(Error::Domain(format!("g(X) needs a positive demand, got {scaled_demand}")));
    }
    let x = BalanceMultiplier::new(multiplier)?.value();
    let target = -penalty * scaled_demand / x;
    let (mut lo, mut hi) = cubic_bracket(penalty, target);
    let h = |x: f64| x * (x - penalty) * (x - penalty) - target;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = h(mid);
        if v == 0.0 {
            return Ok(mid * mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = if h(lo).abs() <= h(hi).abs() { lo } else { hi };
    Ok(root * root)
}

/// `dF2/dn = -B K / (sqrt(n) (sqrt(n) - B)^2)`.
pub fn f2_derivative(penalty: f64, scaled_demand: f64, replicas: f64) -> f64 {
    let x = replicas.sqrt();
    -penalty * scaled_demand / (x * (x - penalty) * (x - penalty))
}

/// Pooled CPU needed by `n` replicas: `K / (1 - B / sqrt(n))`.
pub fn pooled_cpu(penalty: f64, scaled_demand: f64, replicas: f64) -> f64 {
    scaled_demand / (1.0 - penalty / replicas.sqrt())
}

/// Bracket `(X_lo, X_hi)` for the balance multiplier, from the per-service
/// solutions `n*_i` of `n = (M/C) K / (1 - B / sqrt(n))`.
pub fn bounds_for_multiplier(penalties: &[f64], scaled_demands: &[f64], mem_over_cpu: f64) -> Result<(f64, f64)> {
    check_inputs(penalties, scaled_demands)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&b, &k) in penalties.iter().zip(scaled_demands) {
        let root = 0.5 * (b + (b * b + 4.0 * mem_over_cpu * k).sqrt());
        let x = -b * k / (root * (root - b) * (root - b));
        lo = lo.min(x);
        hi = hi.max(x);
    }
    Ok((lo, hi))
}

fn check_inputs(penalties: &[f64], scaled_demands: &[f64]) -> Result<()> {
    if penalties.len() != scaled_demands.len() {
        return Err(Error::Input("penalties and demands differ in length".into()));
    }
    if penalties.is_empty() {
        return Err(Error::Input("no services to size".into()));
    }
    if let Some(b) = penalties.iter().find(|b| !(**b > 0.0)) {
        return Err(Error::Domain(format!("penalties must be positive, got {b}")));
    }
    if let Some(k) = scaled_demands.iter().find(|k| !(**k > 0.0)) {
        return Err(Error::Domain(format!("scaled demands must be positive, got {k}")));
    }
    Ok(())
}

fn balance_sides(penalties: &[f64], scaled: &[f64], ratio: f64, x: f64) -> Result<(f64, f64, Vec<f64>)> {
    let replicas = penalties
        .iter()
        .zip(scaled)
        .map(|(&b, &k)| g_of_x(b, k, x))
        .collect::<Result<Vec<_>>>()?;
    let lhs: f64 = replicas.iter().sum();
    let rhs: f64 = ratio
        * penalties
            .iter()
            .zip(scaled)
            .zip(&replicas)
            .map(|((&b, &k), &n)| pooled_cpu(b, k, n))
            .sum::<f64>();
    Ok((lhs, rhs, replicas))
}

/// Solves the balance equation for `X*`; returns it with `n_i = g_i(X*)`.
pub fn solve_balance(penalties: &[f64], scaled_demands: &[f64], platform: &Platform) -> Result<(f64, Vec<f64>)> {
    let ratio = platform.mem_capacity as f64 / platform.cpu_capacity;
    let (mut lo, mut hi) = bounds_for_multiplier(penalties, scaled_demands, ratio)?;
    let gap = |x: f64| balance_sides(penalties, scaled_demands, ratio, x);

    // The analytic bracket is exact; widen by a hair to absorb rounding.
    let mut widen: f64 = 1e-9;
    for _ in 0..30 {
        let (l, r, _) = gap(lo)?;
        if l - r <= 0.0 {
            break;
        }
        lo *= 1.0 + widen;
        widen *= 4.0;
    }
    let mut widen: f64 = 1e-9;
    for _ in 0..30 {
        let (l, r, _) = gap(hi)?;
        if l - r >= 0.0 {
            break;
        }
        hi *= 1.0 - widen.min(0.5);
        widen *= 4.0;
    }
    let (llo, rlo, nlo) = gap(lo)?;
    let (lhi, rhi, nhi) = gap(hi)?;
    if llo - rlo > 0.0 || lhi - rhi < 0.0 {
        return Err(Error::Internal(format!(
            "balance bracket [{lo:e}, {hi:e}] does not straddle the root: \
             F(lo) = {:e}, F(hi) = {:e}",
            llo - rlo,
            lhi - rhi
        )));
    }
    if lo == hi {
        return Ok((lo, nlo));
    }
    let mut best = if (llo - rlo).abs() <= (lhi - rhi).abs() { (lo, nlo) } else { (hi, nhi) };
    let mut best_gap = (llo - rlo).abs().min((lhi - rhi).abs());
    for _ in 0..400 {
        // Both ends negative: bisect geometrically.
        let mid = -(lo * hi).sqrt();
        if !(mid > lo && mid < hi) {
            break;
        }
        let (l, r, n) = gap(mid)?;
        let f = l - r;
        if f.abs() < best_gap {
            best_gap = f.abs();
            best = (mid, n);
        }
        if f.abs() <= BALANCE_TOLERANCE * l {
            break;
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Relaxed optimum: the homogeneous plan plus the multiplier and machine count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSolution {
    pub plan: HomogeneousPlan,
    pub multiplier: f64,
    /// `sum n_i / M`; equals `sum n_i A_i / C` at the optimum.
    pub machines: f64,
}

pub fn homogeneous(penalties: &[f64], scaled_demands: &[f64], platform: &Platform) -> Result<RelaxedSolution> {
    let (multiplier, replicas) = solve_balance(penalties, scaled_demands, platform)?;
    let slices = replicas
        .iter()
        .zip(penalties)
        .zip(scaled_demands)
        .map(|((&n, &b), &k)| k / (n - b * n.sqrt()))
        .collect();
    let machines = replicas.iter().sum::<f64>() / platform.mem_capacity as f64;
    Ok(RelaxedSolution {
        plan: HomogeneousPlan { replicas, slices },
        multiplier,
        machines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementState {
    pub penalties: Vec<f64>,
    /// Number of relaxed solves performed.
    pub iteration: usize,
    pub converged: bool,
    /// A penalty vector repeated (within epsilon) before convergence.
    pub cycled: bool,
    pub epsilon: f64,
    /// Largest penalty change in the last iteration.
    pub last_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    /// Integral replica counts with their slices.
    pub plan: HomogeneousPlan,
    /// Penalties the returned plan was sized with.
    pub penalties: Vec<f64>,
    pub state: RefinementState,
    /// Relaxed machine count of the fractional solution behind `plan`.
    pub fractional_machines: f64,
}

/// One binomial correction: integral replicas for the given slices, and the
/// penalties that make the Gaussian constraint tight at those values.
fn correct(
    services: &[Service],
    derived: &[ServiceDerived],
    slices: &[f64],
    platform: &Platform,
) -> Result<(Vec<u64>, Vec<f64>)> {
    let f = platform.failure_prob;
    let mut replicas = Vec::with_capacity(services.len());
    let mut penalties = Vec::with_capacity(services.len());
    for ((svc, der), &a) in services.iter().zip(derived).zip(slices) {
        let n = reliability::min_replicas_binomial(a, svc.demand, svc.reliability, f)?;
        let b = match reliability::refine_penalty(n, a, der.scaled_demand) {
            Ok(b) => b,
            Err(Error::Infeasible(_)) => PENALTY_FLOOR,
            Err(e) => return Err(e),
        };
        replicas.push(n);
        penalties.push(b.max(PENALTY_FLOOR));
    }
    Ok((replicas, penalties))
}

/// Caps slices at one machine's CPU, re-deriving the replica count for any
/// capped service from the exact binomial law.
fn cap_slices(services: &[Service], replicas: &mut [u64], slices: &mut [f64], platform: &Platform) -> Result<()> {
    for ((svc, n), a) in services.iter().zip(replicas.iter_mut()).zip(slices.iter_mut()) {
        if *a > platform.cpu_capacity {
            *a = platform.cpu_capacity;
            *n = reliability::min_replicas_binomial(*a, svc.demand, svc.reliability, platform.failure_prob)?;
        }
    }
    Ok(())
}

/// Alternates relaxed solves with binomial corrections until the penalties
/// move by at most `epsilon`, a penalty vector repeats, or `iteration_cap`
/// solves have run. Every returned plan meets the exact constraint
/// `P(A_i Bin(n_i, 1-f) < d_i) < r_i`.
pub fn iterate_noapprox(
    services: &[Service],
    platform: &Platform,
    epsilon: f64,
    iteration_cap: usize,
) -> Result<Refinement> {
    refine_with(
        services,
        platform,
        &RefinementOptions {
            epsilon,
            iteration_cap,
            update: PenaltyUpdate::Replace,
        },
    )
}

/// How corrected penalties replace the previous ones.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyUpdate {
    /// Take the corrected penalty as is.
    #[default]
    Replace,
    /// Never lower a penalty: `B' = max(B, corrected)`. Converges where
    /// plain replacement keeps jumping between integer replica counts.
    Ratchet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementOptions {
    pub epsilon: f64,
    pub iteration_cap: usize,
    pub update: PenaltyUpdate,
}

impl Default for RefinementOptions {
    fn default() -> Self {
        RefinementOptions {
            epsilon: DEFAULT_EPSILON,
            iteration_cap: DEFAULT_ITERATION_CAP,
            update: PenaltyUpdate::Replace,
        }
    }
}

/// [`iterate_noapprox`] with an explicit penalty update rule.
pub fn refine_with(services: &[Service], platform: &Platform, options: &RefinementOptions) -> Result<Refinement> {
    let RefinementOptions {
        epsilon,
        iteration_cap,
        update,
    } = *options;
    platform.validate()?;
    if services.is_empty() {
        return Err(Error::Input("no services to size".into()));
    }
    let derived = services
        .iter()
        .map(|s| {
            s.validate()?;
            ServiceDerived::new(s, platform)
        })
        .collect::<Result<Vec<_>>>()?;
    let scaled: Vec<f64> = derived.iter().map(|d| d.scaled_demand).collect();
    let mut penalties: Vec<f64> = derived.iter().map(|d| d.penalty.max(PENALTY_FLOOR)).collect();
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut best: Option<(f64, Refinement)> = None;
    let cap = iteration_cap.max(1);

    for iteration in 1..=cap {
        let relaxed = homogeneous(&penalties, &scaled, platform)?;
        let mut slices = relaxed.plan.slices.clone();
        let (mut replicas, mut next) = correct(services, &derived, &slices, platform)?;
        if update == PenaltyUpdate::Ratchet {
            for (b, old) in next.iter_mut().zip(&penalties) {
                *b = b.max(*old);
            }
        }
        let delta = penalties
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        cap_slices(services, &mut replicas, &mut slices, platform)?;
        let plan = HomogeneousPlan {
            replicas: replicas.iter().map(|&n| n as f64).collect(),
            slices,
        };
        let converged = delta <= epsilon;
        let cycled = !converged
            && history.iter().any(|h| {
                h.iter().zip(&next).all(|(a, b)| (a - b).abs() <= epsilon)
            });
        debug!("refinement iteration {iteration}: max penalty change {delta:e}");
        let candidate = Refinement {
            plan,
            penalties: penalties.clone(),
            state: RefinementState {
                penalties: next.clone(),
                iteration,
                converged,
                cycled,
                epsilon,
                last_delta: delta,
            },
            fractional_machines: relaxed.machines,
        };
        if converged {
            return Ok(candidate);
        }
        let score = candidate.plan.relaxed_machines(platform);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, candidate.clone()));
        }
        if cycled || iteration == cap {
            let (_, mut out) = best.expect("at least one iterate");
            out.state = candidate.state;
            return Ok(out);
        }
        history.push(std::mem::replace(&mut penalties, next));
    }
    unreachable!("loop returns on its last iteration")
}
