//! Dense two-phase simplex for the small linear programs used by the cone
//! decision procedure and the measure rebalancer.
//!
//! The problems here have at most a few dozen variables, need exact
//! infeasible / unbounded verdicts, and must be bit-for-bit deterministic
//! across runs. A tableau simplex with Bland's entering rule fits all three
//! requirements; speed is irrelevant at this scale.

use crate::error::{Error, Result};

const EPS_COST: f64 = 1e-9;
const EPS_PIVOT: f64 = 1e-9;
const EPS_FEAS: f64 = 1e-8;
const MAX_PIVOTS: usize = 20_000;

/// Verdict of a solve. `Infeasible` and `Unbounded` are answers, not errors.
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// Optimal point in the caller's variables.
    pub x: Vec<f64>,
    /// Objective value in the caller's sense (max problems report the max).
    pub objective: f64,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<&LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

/// A linear program over free variables with optional box bounds:
/// optimise c·x subject to equality and ≤ rows, lo ≤ x ≤ hi.
/// Variables are unbounded unless `set_bounds` says otherwise.
#[derive(Debug, Clone)]
pub struct LpProblem {
    n: usize,
    maximize: bool,
    objective: Vec<f64>,
    eq_rows: Vec<(Vec<f64>, f64)>,
    le_rows: Vec<(Vec<f64>, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl LpProblem {
    pub fn minimize(objective: &[f64]) -> Self {
        Self {
            n: objective.len(),
            maximize: false,
            objective: objective.to_vec(),
            eq_rows: Vec::new(),
            le_rows: Vec::new(),
            lower: vec![f64::NEG_INFINITY; objective.len()],
            upper: vec![f64::INFINITY; objective.len()],
        }
    }

    pub fn maximize(objective: &[f64]) -> Self {
        let mut p = Self::minimize(objective);
        p.maximize = true;
        p
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// a·x = b
    pub fn eq(&mut self, a: &[f64], b: f64) -> &mut Self {
        assert_eq!(a.len(), self.n);
        self.eq_rows.push((a.to_vec(), b));
        self
    }

    /// a·x ≤ b
    pub fn le(&mut self, a: &[f64], b: f64) -> &mut Self {
        assert_eq!(a.len(), self.n);
        self.le_rows.push((a.to_vec(), b));
        self
    }

    /// a·x ≥ b
    pub fn ge(&mut self, a: &[f64], b: f64) -> &mut Self {
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        self.le(&neg, -b)
    }

    /// lo ≤ x_i ≤ hi; use ±infinity for one-sided bounds.
    pub fn set_bounds(&mut self, i: usize, lo: f64, hi: f64) -> &mut Self {
        assert!(lo <= hi, "empty bound interval");
        self.lower[i] = lo;
        self.upper[i] = hi;
        self
    }

    /// lo ≤ x_i ≤ hi for every variable.
    pub fn set_all_bounds(&mut self, lo: f64, hi: f64) -> &mut Self {
        for i in 0..self.n {
            self.set_bounds(i, lo, hi);
        }
        self
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        Tableau::build(self)?.run(self)
    }
}

/// How a user variable maps onto nonnegative standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = shift + y_col
    Shifted { col: usize, shift: f64 },
    /// x = shift - y_col
    Mirrored { col: usize, shift: f64 },
    /// x = y_pos - y_neg
    Split { pos: usize, neg: usize },
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    maps: Vec<VarMap>,
}

impl Tableau {
    /// Converts to standard form (min c·y, A y = rhs, y ≥ 0) and sets up the
    /// phase-1 tableau with one artificial variable per row.
    fn build(p: &LpProblem) -> Result<Self> {
        let mut maps = Vec::with_capacity(p.n);
        let mut n_std = 0usize;
        let mut extra_le: Vec<(usize, f64)> = Vec::new();
        for i in 0..p.n {
            let (lo, hi) = (p.lower[i], p.upper[i]);
            if lo.is_finite() {
                maps.push(VarMap::Shifted { col: n_std, shift: lo });
                n_std += 1;
                if hi.is_finite() {
                    extra_le.push((i, hi));
                }
            } else if hi.is_finite() {
                maps.push(VarMap::Mirrored { col: n_std, shift: hi });
                n_std += 1;
            } else {
                maps.push(VarMap::Split { pos: n_std, neg: n_std + 1 });
                n_std += 2;
            }
        }

        // every row as (coeffs over user vars, rhs, is_equality)
        let mut user_rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
        for (a, b) in &p.eq_rows {
            user_rows.push((a.clone(), *b, true));
        }
        for (a, b) in &p.le_rows {
            user_rows.push((a.clone(), *b, false));
        }
        for (i, hi) in extra_le {
            let mut a = vec![0.0; p.n];
            a[i] = 1.0;
            user_rows.push((a, hi, false));
        }

        let m = user_rows.len();
        let n_slack = user_rows.iter().filter(|r| !r.2).count();
        let total = n_std + n_slack + m; // + artificials
        let art_start = n_std + n_slack;

        let mut rows = vec![vec![0.0; total + 1]; m + 1];
        let mut slack_idx = n_std;
        for (r, (a, b, is_eq)) in user_rows.iter().enumerate() {
            let mut rhs = *b;
            for i in 0..p.n {
                let coeff = a[i];
                if coeff == 0.0 {
                    continue;
                }
                match maps[i] {
                    VarMap::Shifted { col, shift } => {
                        rows[r][col] += coeff;
                        rhs -= coeff * shift;
                    }
                    VarMap::Mirrored { col, shift } => {
                        rows[r][col] -= coeff;
                        rhs -= coeff * shift;
                    }
                    VarMap::Split { pos, neg } => {
                        rows[r][pos] += coeff;
                        rows[r][neg] -= coeff;
                    }
                }
            }
            if !is_eq {
                rows[r][slack_idx] = 1.0;
                slack_idx += 1;
            }
            rows[r][total] = rhs;
            if rows[r][total] < 0.0 {
                for v in rows[r].iter_mut() {
                    *v = -*v;
                }
            }
            rows[r][art_start + r] = 1.0;
        }

        // phase-1 objective: min sum of artificials; with the artificials
        // basic, the reduced-cost row is minus the column sums.
        let mut basis = Vec::with_capacity(m);
        let (constraint_rows, objective) = rows.split_at_mut(m);
        for (r, row) in constraint_rows.iter().enumerate() {
            basis.push(art_start + r);
            for (j, &v) in row.iter().enumerate() {
                if j < art_start || j == total {
                    objective[0][j] -= v;
                }
            }
        }

        Ok(Self { rows, basis, maps })
    }

    fn num_cols(&self) -> usize {
        self.rows[0].len() - 1
    }

    fn num_rows(&self) -> usize {
        self.rows.len() - 1
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let m = self.num_rows();
        let cols = self.num_cols() + 1;
        let piv = self.rows[r][j];
        for v in self.rows[r].iter_mut() {
            *v /= piv;
        }
        for rr in 0..=m {
            if rr == r {
                continue;
            }
            let factor = self.rows[rr][j];
            if factor == 0.0 {
                continue;
            }
            for k in 0..cols {
                let delta = factor * self.rows[r][k];
                self.rows[rr][k] -= delta;
            }
            self.rows[rr][j] = 0.0;
        }
        self.basis[r] = j;
    }

    /// Simplex iterations with Bland's rule, restricted to columns < n_cols.
    fn iterate(&mut self, n_cols: usize) -> Result<bool> {
        let m = self.num_rows();
        let rhs = self.num_cols();
        for _ in 0..MAX_PIVOTS {
            let entering = (0..n_cols).find(|&j| self.rows[m][j] < -EPS_COST);
            let Some(j) = entering else { return Ok(true) };
            let mut leave: Option<usize> = None;
            let mut best = f64::INFINITY;
            for r in 0..m {
                let a = self.rows[r][j];
                if a > EPS_PIVOT {
                    let ratio = (self.rows[r][rhs]).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(cur) => {
                            ratio < best || (ratio == best && self.basis[r] < self.basis[cur])
                        }
                    };
                    if better {
                        leave = Some(r);
                        best = ratio;
                    }
                }
            }
            let Some(r) = leave else { return Ok(false) };
            self.pivot(r, j);
        }
        Err(Error::LpFailure("pivot limit reached".into()))
    }

    fn run(mut self, p: &LpProblem) -> Result<LpOutcome> {
        let total = self.num_cols();
        let m = self.num_rows();
        let art_start = total - m;

        // phase 1
        if !self.iterate(art_start)? {
            return Err(Error::LpFailure("phase 1 reported an unbounded ray".into()));
        }
        let infeasibility = -self.rows[m][total];
        if infeasibility > EPS_FEAS {
            return Ok(LpOutcome::Infeasible);
        }

        // drive leftover artificials out of the basis, dropping rows that
        // turn out to be redundant
        let mut r = 0;
        while r < self.num_rows() {
            if self.basis[r] >= art_start {
                let j = (0..art_start).find(|&j| self.rows[r][j].abs() > EPS_PIVOT);
                match j {
                    Some(j) => self.pivot(r, j),
                    None => {
                        self.rows.remove(r);
                        self.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }

        // rebuild as a phase-2 tableau without artificial columns
        let m2 = self.basis.len();
        let keep = art_start;
        let mut rows2: Vec<Vec<f64>> = Vec::with_capacity(m2 + 1);
        for r in 0..m2 {
            let mut row: Vec<f64> = self.rows[r][0..keep].to_vec();
            row.push(self.rows[r][total]);
            rows2.push(row);
        }
        let mut cost = vec![0.0; keep + 1];
        let sense = if p.maximize { -1.0 } else { 1.0 };
        for (i, map) in self.maps.iter().enumerate() {
            let c = sense * p.objective[i];
            match *map {
                VarMap::Shifted { col, .. } => cost[col] += c,
                VarMap::Mirrored { col, .. } => cost[col] -= c,
                VarMap::Split { pos, neg } => {
                    cost[pos] += c;
                    cost[neg] -= c;
                }
            }
        }
        for r in 0..m2 {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for k in 0..=keep {
                    let delta = cb * rows2[r][k];
                    cost[k] -= delta;
                }
            }
        }
        rows2.push(cost);
        self.rows = rows2;

        if !self.iterate(keep)? {
            return Ok(LpOutcome::Unbounded);
        }

        // read the standard-form solution out of the basis
        let mut y = vec![0.0; keep];
        for r in 0..self.basis.len() {
            let val = self.rows[r][keep];
            y[self.basis[r]] = if val < 0.0 { 0.0 } else { val };
        }
        let mut x = vec![0.0; p.n];
        for (i, map) in self.maps.iter().enumerate() {
            x[i] = match *map {
                VarMap::Shifted { col, shift } => shift + y[col],
                VarMap::Mirrored { col, shift } => shift - y[col],
                VarMap::Split { pos, neg } => y[pos] - y[neg],
            };
        }
        let objective: f64 = x.iter().zip(&p.objective).map(|(xi, ci)| xi * ci).sum();
        Ok(LpOutcome::Optimal(LpSolution { x, objective }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solved(outcome: LpOutcome) -> LpSolution {
        match outcome {
            LpOutcome::Optimal(s) => s,
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn simple_max_on_a_simplex() {
        let mut p = LpProblem::maximize(&[1.0, 1.0]);
        p.set_all_bounds(0.0, f64::INFINITY);
        p.le(&[1.0, 1.0], 1.0);
        let s = solved(p.solve().unwrap());
        assert!((s.objective - 1.0).abs() < 1e-12);
        assert!((s.x[0] + s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible() {
        let mut p = LpProblem::minimize(&[1.0]);
        p.set_bounds(0, 0.0, f64::INFINITY);
        p.le(&[1.0], -1.0);
        assert_eq!(p.solve().unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut p = LpProblem::maximize(&[1.0]);
        p.set_bounds(0, 0.0, f64::INFINITY);
        assert_eq!(p.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn opposite_sign_constraints_pin_zero() {
        // max 0.02 p subject to 0.1 p ≥ 0 and -0.1 p ≥ 0, |p| ≤ 1
        let mut p = LpProblem::maximize(&[0.02]);
        p.set_bounds(0, -1.0, 1.0);
        p.ge(&[0.1], 0.0);
        p.ge(&[-0.1], 0.0);
        let s = solved(p.solve().unwrap());
        assert!(s.objective.abs() < 1e-12);
        assert!(s.x[0].abs() < 1e-10);
    }

    #[test]
    fn free_variable_with_ge_row() {
        let mut p = LpProblem::minimize(&[1.0]);
        p.ge(&[1.0], -3.0);
        let s = solved(p.solve().unwrap());
        assert!((s.objective + 3.0).abs() < 1e-12);
    }

    #[test]
    fn equality_with_box() {
        let mut p = LpProblem::maximize(&[1.0, 2.0]);
        p.set_all_bounds(0.0, 1.0);
        p.eq(&[1.0, 1.0], 1.0);
        let s = solved(p.solve().unwrap());
        assert!((s.objective - 2.0).abs() < 1e-12);
        assert!(s.x[0].abs() < 1e-12);
        assert!((s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_lower_bounds() {
        // min x + y over the box [-2, 5]^2 with x + y ≥ -3
        let mut p = LpProblem::minimize(&[1.0, 1.0]);
        p.set_all_bounds(-2.0, 5.0);
        p.ge(&[1.0, 1.0], -3.0);
        let s = solved(p.solve().unwrap());
        assert!((s.objective + 3.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut p = LpProblem::maximize(&[1.0]);
        p.set_bounds(0, 0.0, 2.0);
        p.eq(&[1.0], 1.5);
        p.eq(&[2.0], 3.0);
        let s = solved(p.solve().unwrap());
        assert!((s.x[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn reweighting_instance_reaches_known_optimum() {
        // variables (u1, v1, u2, v2) ≥ 0; minimise total movement subject to
        // mass preservation and a barycenter target; the optimum moves 0.2 up
        // on the first atom and 0.2 down on the second.
        let mut p = LpProblem::minimize(&[1.0, 1.0, 1.0, 1.0]);
        p.set_all_bounds(0.0, f64::INFINITY);
        p.eq(&[1.0, -1.0, 1.0, -1.0], 0.0);
        p.eq(&[2.25, -2.25, -3.75, 3.75], 1.2);
        let delta = 1e-6;
        p.ge(&[1.0, -1.0, 0.0, 0.0], -(1.0 - delta) * 0.3);
        p.ge(&[0.0, 0.0, 1.0, -1.0], -(1.0 - delta) * 0.5);
        let s = solved(p.solve().unwrap());
        assert!((s.objective - 0.4).abs() < 1e-10);
        let net1 = s.x[0] - s.x[1];
        let net2 = s.x[2] - s.x[3];
        assert!((net1 - 0.2).abs() < 1e-10);
        assert!((net2 + 0.2).abs() < 1e-10);
    }

    #[test]
    fn tight_box_equality_combination() {
        // max x - y with x = y forced and y ∈ [0.25, 0.25]
        let mut p = LpProblem::maximize(&[1.0, -1.0]);
        p.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
        p.set_bounds(1, 0.25, 0.25);
        p.eq(&[1.0, -1.0], 0.0);
        let s = solved(p.solve().unwrap());
        assert!(s.objective.abs() < 1e-12);
        assert!((s.x[0] - 0.25).abs() < 1e-12);
    }
}
