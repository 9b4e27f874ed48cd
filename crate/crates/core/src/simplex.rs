//! Dense revised simplex for covering LPs
//! `min c.x  s.t.  A x >= b,  x >= 0` with `b >= 0` and sparse columns.
//!
//! Rows are few (one per service), columns arrive one at a time from the
//! pricing loop, and the solver keeps its basis between calls so that each
//! re-solve after [`CoveringLp::add_column`] starts from the previous optimum.
//! Dantzig pricing is used until a run of degenerate pivots appears, then
//! Bland's rule takes over until the objective moves again.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const REDUCED_COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 100;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    /// Value of every structural column, in insertion order.
    pub primal: Vec<f64>,
    /// Row prices `y >= 0`; `c_j - y.A_j >= 0` holds for every column at optimality.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Var {
    Column(usize),
    Surplus(usize),
    Artificial(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Feasibility,
    Optimality,
}

#[derive(Debug, Clone)]
pub struct CoveringLp {
    rhs: Vec<f64>,
    columns: Vec<Vec<(usize, f64)>>,
    costs: Vec<f64>,
    basis: Vec<Var>,
    in_basis_col: Vec<bool>,
    in_basis_surplus: Vec<bool>,
    binv: Vec<f64>,
    values: Vec<f64>,
    phase: Phase,
    since_refactor: usize,
    pivot_limit: usize,
}

impl CoveringLp {
    pub fn new(rhs: Vec<f64>) -> Result<Self> {
        if let Some(b) = rhs.iter().find(|b| !(**b >= 0.0)) {
            return Err(Error::Input(format!("covering right-hand side must be >= 0, got {b}")));
        }
        let m = rhs.len();
        let mut binv = vec![0.0; m * m];
        for r in 0..m {
            binv[r * m + r] = 1.0;
        }
        Ok(CoveringLp {
            values: rhs.clone(),
            basis: (0..m).map(Var::Artificial).collect(),
            in_basis_col: Vec::new(),
            in_basis_surplus: vec![false; m],
            rhs,
            columns: Vec::new(),
            costs: Vec::new(),
            binv,
            phase: Phase::Feasibility,
            since_refactor: 0,
            pivot_limit: 100_000,
        })
    }

    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn set_pivot_limit(&mut self, limit: usize) {
        self.pivot_limit = limit;
    }

    /// Appends a nonbasic column; the current basis stays primal feasible.
    pub fn add_column(&mut self, entries: Vec<(usize, f64)>, cost: f64) -> Result<usize> {
        if let Some(&(r, _)) = entries.iter().find(|(r, _)| *r >= self.rows()) {
            return Err(Error::Input(format!("column touches row {r} of {}", self.rows())));
        }
        self.columns.push(entries.into_iter().filter(|(_, v)| *v != 0.0).collect());
        self.costs.push(cost);
        self.in_basis_col.push(false);
        Ok(self.columns.len() - 1)
    }

    fn cost(&self, v: Var) -> f64 {
        match (self.phase, v) {
            (Phase::Feasibility, Var::Artificial(_)) => 1.0,
            (Phase::Feasibility, _) => 0.0,
            (Phase::Optimality, Var::Column(j)) => self.costs[j],
            (Phase::Optimality, _) => 0.0,
        }
    }

    fn is_basic(&self, v: Var) -> bool {
        match v {
            Var::Column(j) => self.in_basis_col[j],
            Var::Surplus(i) => self.in_basis_surplus[i],
            Var::Artificial(_) => self.basis.contains(&v),
        }
    }

    fn set_basic(&mut self, v: Var, flag: bool) {
        match v {
            Var::Column(j) => self.in_basis_col[j] = flag,
            Var::Surplus(i) => self.in_basis_surplus[i] = flag,
            Var::Artificial(_) => {}
        }
    }

    fn column_of(&self, v: Var) -> Vec<(usize, f64)> {
        match v {
            Var::Column(j) => self.columns[j].clone(),
            Var::Surplus(i) => vec![(i, -1.0)],
            Var::Artificial(i) => vec![(i, 1.0)],
        }
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.rows();
        let mut y = vec![0.0; m];
        for (r, &v) in self.basis.iter().enumerate() {
            let c = self.cost(v);
            if c != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (yk, &b) in y.iter_mut().zip(row) {
                    *yk += c * b;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, v: Var, y: &[f64]) -> f64 {
        match v {
            Var::Column(j) => self.costs_for_phase(j) - self.columns[j].iter().map(|&(r, a)| y[r] * a).sum::<f64>(),
            Var::Surplus(i) => y[i],
            Var::Artificial(i) => self.cost(v) - y[i],
        }
    }

    fn costs_for_phase(&self, j: usize) -> f64 {
        self.cost(Var::Column(j))
    }

    fn entering(&self, y: &[f64], bland: bool) -> Option<Var> {
        let mut best: Option<(f64, Var)> = None;
        let candidates = (0..self.columns.len())
            .map(Var::Column)
            .chain((0..self.rows()).map(Var::Surplus));
        for v in candidates {
            if self.is_basic(v) {
                continue;
            }
            let d = self.reduced_cost(v, y);
            if d < -REDUCED_COST_TOL {
                if bland {
                    return Some(v);
                }
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, v));
                }
            }
        }
        best.map(|(_, v)| v)
    }

    fn direction(&self, v: Var) -> Vec<f64> {
        let m = self.rows();
        let col = self.column_of(v);
        (0..m)
            .map(|r| col.iter().map(|&(k, a)| self.binv[r * m + k] * a).sum())
            .collect()
    }

    fn pivot(&mut self, row: usize, entering: Var, w: &[f64]) {
        let m = self.rows();
        let piv = w[row];
        {
            let prow = &mut self.binv[row * m..(row + 1) * m];
            for b in prow.iter_mut() {
                *b /= piv;
            }
        }
        self.values[row] /= piv;
        let prow: Vec<f64> = self.binv[row * m..(row + 1) * m].to_vec();
        let pval = self.values[row];
        for (r, &factor) in w.iter().enumerate().take(m) {
            if r == row || factor == 0.0 {
                continue;
            }
            let dst = &mut self.binv[r * m..(r + 1) * m];
            for (d, &p) in dst.iter_mut().zip(&prow) {
                *d -= factor * p;
            }
            self.values[r] -= factor * pval;
            if self.values[r] < 0.0 && self.values[r] > -1e-9 {
                self.values[r] = 0.0;
            }
        }
        let leaving = self.basis[row];
        self.set_basic(leaving, false);
        self.set_basic(entering, true);
        self.basis[row] = entering;
        self.since_refactor += 1;
    }

    /// Rebuilds `B^-1` and basic values from scratch (Gauss-Jordan, partial pivoting).
    fn refactor(&mut self) -> Result<()> {
        let m = self.rows();
        let mut a = vec![0.0; m * m];
        for (c, &v) in self.basis.iter().enumerate() {
            for (r, val) in self.column_of(v) {
                a[r * m + c] = val;
            }
        }
        let mut inv = vec![0.0; m * m];
        for r in 0..m {
            inv[r * m + r] = 1.0;
        }
        for col in 0..m {
            let (prow, pmax) = (col..m)
                .map(|r| (r, a[r * m + col].abs()))
                .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax < 1e-12 {
                return Err(Error::Internal("singular basis during refactorization".into()));
            }
            if prow != col {
                for k in 0..m {
                    a.swap(prow * m + k, col * m + k);
                    inv.swap(prow * m + k, col * m + k);
                }
            }
            let d = a[col * m + col];
            for k in 0..m {
                a[col * m + k] /= d;
                inv[col * m + k] /= d;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = a[r * m + col];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    a[r * m + k] -= f * a[col * m + k];
                    inv[r * m + k] -= f * inv[col * m + k];
                }
            }
        }
        // Row r of inv now maps to basis position r because B's column c was placed at c.
        self.binv = inv;
        self.values = (0..m)
            .map(|r| {
                let v: f64 = (0..m).map(|k| self.binv[r * m + k] * self.rhs[k]).sum();
                if v < 0.0 && v > -1e-9 { 0.0 } else { v }
            })
            .collect();
        self.since_refactor = 0;
        Ok(())
    }

    fn run_phase(&mut self, pivots: &mut usize) -> Result<LpStatus> {
        let mut degenerate = 0usize;
        loop {
            if *pivots >= self.pivot_limit {
                return Ok(LpStatus::IterationLimit);
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let y = self.duals();
            let bland = degenerate >= DEGENERATE_RUN;
            let Some(entering) = self.entering(&y, bland) else {
                return Ok(LpStatus::Optimal);
            };
            let w = self.direction(entering);
            let mut leave: Option<(usize, f64)> = None;
            for (r, &wr) in w.iter().enumerate() {
                if wr <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.values[r].max(0.0) / wr;
                let better = match leave {
                    None => true,
                    Some((lr, best)) => {
                        if ratio < best - 1e-12 {
                            true
                        } else if ratio <= best + 1e-12 {
                            if bland {
                                self.basis[r] < self.basis[lr]
                            } else {
                                // Prefer kicking out artificials, then the larger pivot.
                                let art_r = matches!(self.basis[r], Var::Artificial(_));
                                let art_l = matches!(self.basis[lr], Var::Artificial(_));
                                (art_r && !art_l) || (art_r == art_l && wr > w[lr])
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
            let Some((row, step)) = leave else {
                return Err(Error::Internal("covering LP reported unbounded".into()));
            };
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(row, entering, &w);
            *pivots += 1;
        }
    }

    /// Pivots remaining zero-valued artificials out of the basis.
    fn drive_out_artificials(&mut self) -> Result<()> {
        let m = self.rows();
        for row in 0..m {
            if !matches!(self.basis[row], Var::Artificial(_)) {
                continue;
            }
            let brow = &self.binv[row * m..(row + 1) * m];
            let mut best: Option<(f64, Var)> = None;
            let candidates = (0..self.rows())
                .map(Var::Surplus)
                .chain((0..self.columns.len()).map(Var::Column));
            for v in candidates {
                if self.is_basic(v) {
                    continue;
                }
                let wr: f64 = self.column_of(v).iter().map(|&(k, a)| brow[k] * a).sum();
                if best.is_none_or(|(b, _)| wr.abs() > b) {
                    best = Some((wr.abs(), v));
                }
            }
            match best {
                Some((mag, v)) if mag > PIVOT_TOL => {
                    let w = self.direction(v);
                    self.pivot(row, v, &w);
                }
                _ => return Err(Error::Internal("cannot remove artificial from basis".into())),
            }
        }
        self.refactor()
    }

    /// Solves (or re-solves from the current basis).
    pub fn solve(&mut self) -> Result<LpSolution> {
        let mut pivots = 0;
        if self.phase == Phase::Feasibility {
            let status = self.run_phase(&mut pivots)?;
            if status == LpStatus::IterationLimit {
                return Ok(self.solution(status, pivots));
            }
            let infeasibility: f64 = self
                .basis
                .iter()
                .zip(&self.values)
                .filter(|(v, _)| matches!(v, Var::Artificial(_)))
                .map(|(_, x)| *x)
                .sum();
            let scale = 1.0 + self.rhs.iter().sum::<f64>();
            if infeasibility > 1e-7 * scale {
                return Ok(self.solution(LpStatus::Infeasible, pivots));
            }
            self.drive_out_artificials()?;
            self.phase = Phase::Optimality;
        }
        let status = self.run_phase(&mut pivots)?;
        Ok(self.solution(status, pivots))
    }

    fn solution(&self, status: LpStatus, pivots: usize) -> LpSolution {
        let mut primal = vec![0.0; self.columns.len()];
        for (&v, &x) in self.basis.iter().zip(&self.values) {
            if let Var::Column(j) = v {
                primal[j] = x.max(0.0);
            }
        }
        let objective = primal.iter().zip(&self.costs).map(|(x, c)| x * c).sum();
        let duals = if self.phase == Phase::Optimality {
            self.duals().into_iter().map(|y| y.max(0.0)).collect()
        } else {
            vec![0.0; self.rows()]
        };
        LpSolution {
            status,
            objective,
            primal,
            duals,
            pivots,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_variable() {
        let mut lp = CoveringLp::new(vec![10.0]).unwrap();
        lp.add_column(vec![(0, 1.0)], 1.0).unwrap();
        let sol = lp.solve().unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.primal[0], 10.0);
        assert_relative_eq!(sol.duals[0], 1.0);
    }

    #[test]
    fn shared_column() {
        let mut lp = CoveringLp::new(vec![5.0, 3.0]).unwrap();
        lp.add_column(vec![(0, 1.0), (1, 1.0)], 1.0).unwrap();
        lp.add_column(vec![(0, 1.0)], 1.0).unwrap();
        let sol = lp.solve().unwrap();
        assert_relative_eq!(sol.objective, 5.0, epsilon = 1e-12);
        assert_relative_eq!(sol.primal[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(sol.primal[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_when_row_uncovered() {
        let mut lp = CoveringLp::new(vec![1.0, 1.0]).unwrap();
        lp.add_column(vec![(0, 1.0)], 1.0).unwrap();
        assert_eq!(lp.solve().unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn warm_start_after_new_column() {
        let mut lp = CoveringLp::new(vec![4.0, 4.0]).unwrap();
        lp.add_column(vec![(0, 1.0)], 1.0).unwrap();
        lp.add_column(vec![(1, 1.0)], 1.0).unwrap();
        assert_relative_eq!(lp.solve().unwrap().objective, 8.0);
        lp.add_column(vec![(0, 1.0), (1, 0.5)], 1.0).unwrap();
        let sol = lp.solve().unwrap();
        assert_relative_eq!(sol.objective, 6.0, epsilon = 1e-12);
        // Complementary slackness: every column prices at most its cost.
        for col in [vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 1.0), (1, 0.5)]] {
            let priced: f64 = col.iter().map(|&(r, a)| sol.duals[r] * a).sum();
            assert!(priced <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn zero_rhs_rows() {
        let mut lp = CoveringLp::new(vec![0.0, 2.0]).unwrap();
        lp.add_column(vec![(0, 1.0)], 1.0).unwrap();
        lp.add_column(vec![(1, 1.0)], 1.0).unwrap();
        let sol = lp.solve().unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.objective, 2.0);
    }
}
