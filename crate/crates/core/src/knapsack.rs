//! Knapsack with a cardinality bound in which at most one item may be taken
//! fractionally. This is the pricing problem of the packing master LP.
//!
//! The exact problem is NP-complete; [`solve_dp`] runs a pseudo-polynomial
//! dynamic program over a discretized capacity grid. Sizes are rounded *up*
//! onto the grid, so every returned solution is feasible for the original
//! continuous instance; only optimality may suffer, by at most a few grid
//! units of profit density.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid units per machine CPU used by default.
pub const DEFAULT_RESOLUTION: usize = 1000;

/// Largest instance [`brute_force_oracle`] accepts.
pub const ORACLE_MAX_ITEMS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitKnapsackInstance {
    pub sizes: Vec<f64>,
    pub profits: Vec<f64>,
    pub capacity: f64,
    pub max_items: usize,
}

impl SplitKnapsackInstance {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.sizes.len() != self.profits.len() {
            return Err(Error::Input("sizes and profits differ in length".into()));
        }
        if let Some(s) = self.sizes.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Input(format!("item size must be positive, got {s}")));
        }
        if let Some(p) = self.profits.iter().find(|p| !(**p >= 0.0)) {
            return Err(Error::Input(format!("item profit must be nonnegative, got {p}")));
        }
        if !(self.capacity > 0.0) || self.max_items == 0 {
            return Err(Error::Input("capacity and item bound must be positive".into()));
        }
        Ok(())
    }

    /// Items worth considering, sorted by non-increasing profit density.
    /// Ties keep the original index order.
    fn ranked_items(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).filter(|&i| self.profits[i] > 0.0).collect();
        order.sort_by(|&a, &b| {
            let ra = self.profits[a] / self.sizes[a];
            let rb = self.profits[b] / self.sizes[b];
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSolution {
    pub weights: Vec<f64>,
    pub profit: f64,
    pub split_index: Option<usize>,
}

impl SplitSolution {
    fn empty(n: usize) -> Self {
        SplitSolution {
            weights: vec![0.0; n],
            profit: 0.0,
            split_index: None,
        }
    }

    pub fn used_capacity(&self, sizes: &[f64]) -> f64 {
        self.weights.iter().zip(sizes).map(|(x, s)| x * s).sum()
    }

    pub fn item_count(&self) -> usize {
        self.weights.iter().filter(|&&x| x > 0.0).count()
    }
}

/// Integer-sized instance on a grid of `capacity` units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteInstance {
    pub sizes: Vec<usize>,
    pub capacity: usize,
}

/// `s_hat = ceil(s * Q / C)`, capacity `Q`.
///
/// A 1e-9 grid-unit slack absorbs representation error, so that a size of
/// exactly 0.05 on a 1000-unit grid maps to 50 rather than 51.
pub fn discretize(instance: &SplitKnapsackInstance, resolution: usize) -> DiscreteInstance {
    let q = resolution.max(1);
    let scale = q as f64 / instance.capacity;
    DiscreteInstance {
        sizes: instance
            .sizes
            .iter()
            .map(|&s| {
                let units = (s * scale - 1e-9).ceil();
                if units < 1.0 {
                    1
                } else if units > (q + 1) as f64 {
                    q + 1
                } else {
                    units as usize
                }
            })
            .collect(),
        capacity: q,
    }
}

/// Profit table `P(u, l)` for the current item prefix, with take-bits kept
/// per item for reconstruction.
struct DpTable {
    cap: usize,
    max_items: usize,
    profit: Vec<f64>,
    take: Vec<Vec<bool>>,
}

impl DpTable {
    fn new(cap: usize, max_items: usize) -> Self {
        DpTable {
            cap,
            max_items,
            profit: vec![0.0; (max_items + 1) * (cap + 1)],
            take: Vec::new(),
        }
    }

    #[inline]
    fn at(&self, u: usize, l: usize) -> f64 {
        self.profit[l * (self.cap + 1) + u]
    }

    fn push_item(&mut self, size: usize, profit: f64) {
        let width = self.cap + 1;
        let mut take = vec![false; (self.max_items + 1) * width];
        if size <= self.cap {
            for l in (1..=self.max_items).rev() {
                let (below, here) = self.profit.split_at_mut(l * width);
                let prev = &below[(l - 1) * width..];
                let row = &mut here[..width];
                let bits = &mut take[l * width..(l + 1) * width];
                for u in (size..=self.cap).rev() {
                    let cand = prev[u - size] + profit;
                    if cand > row[u] {
                        row[u] = cand;
                        bits[u] = true;
                    }
                }
            }
        }
        self.take.push(take);
    }

    /// Items (positions in push order) achieving `P(u, l)` over the first `prefix` items.
    fn reconstruct(&self, sizes: &[usize], mut u: usize, mut l: usize, prefix: usize) -> Vec<usize> {
        let width = self.cap + 1;
        let mut chosen = Vec::new();
        for pos in (0..prefix).rev() {
            if l == 0 {
                break;
            }
            if self.take[pos][l * width + u] {
                chosen.push(pos);
                u -= sizes[pos];
                l -= 1;
            }
        }
        chosen
    }
}

struct SplitCandidate {
    value: f64,
    pos: usize,
    budget: usize,
}

/// Optimal split-knapsack solution on a `resolution`-unit capacity grid.
pub fn solve_dp(instance: &SplitKnapsackInstance, resolution: usize) -> Result<SplitSolution> {
    instance.check()?;
    let n = instance.len();
    let order = instance.ranked_items();
    if order.is_empty() {
        return Ok(SplitSolution::empty(n));
    }
    let grid = discretize(instance, resolution);
    let q = grid.capacity;
    let m = instance.max_items.min(order.len());
    let unit = instance.capacity / q as f64;
    let sizes: Vec<usize> = order.iter().map(|&i| grid.sizes[i]).collect();

    let mut table = DpTable::new(q, m);
    let mut best_split: Option<SplitCandidate> = None;
    for (pos, &item) in order.iter().enumerate() {
        // Split item `item` on top of a full selection drawn from higher-density items.
        let (s, p) = (instance.sizes[item], instance.profits[item]);
        for budget in 0..q {
            let fraction = ((q - budget) as f64 * unit / s).min(1.0);
            let value = table.at(budget, m - 1) + fraction * p;
            if best_split.as_ref().is_none_or(|b| value > b.value) {
                best_split = Some(SplitCandidate {
                    value,
                    pos,
                    budget,
                });
            }
        }
        table.push_item(sizes[pos], p);
    }

    let full_value = table.at(q, m);
    let mut weights = vec![0.0; n];
    let mut split_index = None;
    match best_split {
        Some(split) if split.value > full_value => {
            for pos in table.reconstruct(&sizes, split.budget, m - 1, split.pos) {
                weights[order[pos]] = 1.0;
            }
            // The grid only bounds the full items' real footprint; give the
            // split item whatever real capacity they leave.
            let used: f64 = weights.iter().zip(&instance.sizes).map(|(x, s)| x * s).sum();
            let item = order[split.pos];
            let fraction = ((instance.capacity - used) / instance.sizes[item]).clamp(0.0, 1.0);
            weights[item] = fraction;
            if fraction > 0.0 && fraction < 1.0 {
                split_index = Some(item);
            }
        }
        _ => {
            for pos in table.reconstruct(&sizes, q, m, order.len()) {
                weights[order[pos]] = 1.0;
            }
        }
    }
    let profit = weights.iter().zip(&instance.profits).map(|(x, p)| x * p).sum();
    Ok(SplitSolution {
        weights,
        profit,
        split_index,
    })
}

/// Exact continuous optimum by enumerating item subsets of size at most `M`
/// and filling each greedily by profit density (the last item may split).
pub fn brute_force_oracle(instance: &SplitKnapsackInstance) -> Result<SplitSolution> {
    instance.check()?;
    let n = instance.len();
    if n > ORACLE_MAX_ITEMS {
        return Err(Error::Input(format!(
            "oracle limited to {ORACLE_MAX_ITEMS} items, got {n}"
        )));
    }
    let order = instance.ranked_items();
    let mut best = SplitSolution::empty(n);
    let mut subset = Vec::with_capacity(instance.max_items);
    enumerate_subsets(&order, 0, instance.max_items, &mut subset, &mut |chosen| {
        let cand = greedy_fill(instance, chosen);
        if cand.profit > best.profit {
            best = cand;
        }
    });
    Ok(best)
}

fn enumerate_subsets(
    items: &[usize],
    start: usize,
    room: usize,
    subset: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    visit(subset);
    if room == 0 {
        return;
    }
    for k in start..items.len() {
        subset.push(items[k]);
        enumerate_subsets(items, k + 1, room - 1, subset, visit);
        subset.pop();
    }
}

// `chosen` is already sorted by density because `items` was.
fn greedy_fill(instance: &SplitKnapsackInstance, chosen: &[usize]) -> SplitSolution {
    let mut sol = SplitSolution::empty(instance.len());
    let mut room = instance.capacity;
    for &i in chosen {
        if room <= 0.0 {
            break;
        }
        let s = instance.sizes[i];
        let x = (room / s).min(1.0);
        sol.weights[i] = x;
        sol.profit += x * instance.profits[i];
        room -= x * s;
        if x < 1.0 {
            sol.split_index = Some(i);
            break;
        }
    }
    sol
}
