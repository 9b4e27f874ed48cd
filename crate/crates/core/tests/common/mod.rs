#![allow(dead_code)]

use relalloc::knapsack::{discretize, SplitKnapsackInstance, SplitSolution};
use relalloc::model::{Configuration, Platform};

/// Every valid configuration that is not dominated: full subsets, and full
/// subsets plus one item taking all the capacity they leave.
pub fn enumerate_configs(slices: &[f64], platform: &Platform) -> Vec<Configuration> {
    let n = slices.len();
    let cap = platform.cpu_capacity;
    let mut out = Vec::new();
    for mask in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let used: f64 = members.iter().map(|&i| slices[i]).sum();
        if members.len() <= platform.mem_capacity && used <= cap + 1e-12 {
            out.push(Configuration::from_pairs(members.iter().map(|&i| (i, 1.0))));
        }
    }
    for mask in 0u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let used: f64 = members.iter().map(|&i| slices[i]).sum();
        if members.len() + 1 > platform.mem_capacity || used > cap + 1e-12 {
            continue;
        }
        for j in (0..n).filter(|j| mask & (1 << j) == 0) {
            let x = ((cap - used) / slices[j]).min(1.0);
            if x > 1e-12 && x < 1.0 {
                out.push(Configuration::from_pairs(members.iter().map(|&i| (i, 1.0)).chain([(j, x)])));
            }
        }
    }
    out
}

/// Solves the square system `a y = b` by Gaussian elimination with partial pivoting.
pub fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let m = b.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let pivot_row = a[col].clone();
        for r in 0..m {
            if r != col {
                let f = a[r][col] / pivot_row[col];
                for (x, p) in a[r][col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..m).map(|i| b[i] / a[i][i]).collect())
}

/// Optimum of `min sum lambda s.t. sum_c lambda_c x_ic >= n_i` through its
/// dual `max n.p s.t. x_c.p <= 1, p >= 0`, by visiting every dual vertex.
pub fn lp_optimum_by_vertices(configs: &[Configuration], targets: &[f64]) -> f64 {
    let m = targets.len();
    let mut rows: Vec<(Vec<f64>, f64)> = configs
        .iter()
        .map(|c| ((0..m).map(|i| c.fraction(i)).collect(), 1.0))
        .collect();
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = -1.0;
        rows.push((e, 0.0));
    }
    let mut best = f64::NEG_INFINITY;
    let mut pick: Vec<usize> = (0..m).collect();
    loop {
        let a = pick.iter().map(|&r| rows[r].0.clone()).collect();
        let b = pick.iter().map(|&r| rows[r].1).collect();
        if let Some(p) = solve_square(a, b) {
            let feasible = rows
                .iter()
                .all(|(row, rhs)| row.iter().zip(&p).map(|(x, y)| x * y).sum::<f64>() <= rhs + 1e-9);
            if feasible {
                best = best.max(p.iter().zip(targets).map(|(p, n)| p * n).sum());
            }
        }
        // Next m-combination of the rows.
        let mut i = m;
        while i > 0 && pick[i - 1] == rows.len() - m + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        pick[i - 1] += 1;
        for j in i..m {
            pick[j] = pick[j - 1] + 1;
        }
    }
    best
}

/// Loss allowance of the grid: one grid unit of capacity per chosen item,
/// valued at that item's profit density on the grid.
pub fn discretization_bound(inst: &SplitKnapsackInstance, oracle: &SplitSolution, q: usize) -> f64 {
    let grid = discretize(inst, q);
    oracle
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(i, _)| inst.profits[i] / grid.sizes[i] as f64)
        .sum()
}
