//! Bounded linear programs and a dense simplex solver.
//!
//! The solver works on the dual of the bound-shifted primal. Scenario programs
//! have a handful of variables and many rows, so the dual tableau has one row
//! per variable and one column per constraint, which keeps every pivot cheap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `coeffs · y ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

/// Minimize `objective · y` subject to `rows` and `lower ≤ y ≤ upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            objective,
            rows: Vec::new(),
            lower,
            upper,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn push(&mut self, coeffs: Vec<f64>, rhs: f64) {
        self.rows.push(Row { coeffs, rhs });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if n == 0 || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Lp(format!(
                "{} objective entries, {} lower and {} upper bounds",
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        for k in 0..n {
            if !self.objective[k].is_finite() || !self.lower[k].is_finite() || self.upper[k].is_nan() {
                return Err(Error::Lp(format!("variable {k} has a non-finite objective or lower bound")));
            }
            if self.lower[k] > self.upper[k] {
                return Err(Error::Lp(format!("variable {k} has empty bounds")));
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.coeffs.len() != n {
                return Err(Error::Lp(format!("row {i} has {} coefficients, expected {n}", r.coeffs.len())));
            }
            if !r.rhs.is_finite() || r.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::Lp(format!("row {i} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Largest violation `coeffs · y − rhs` over all rows and bounds (≤ 0 when feasible).
    pub fn max_violation(&self, y: &[f64]) -> f64 {
        let rows = self
            .rows
            .iter()
            .map(|r| dot(&r.coeffs, y) - r.rhs)
            .fold(f64::NEG_INFINITY, f64::max);
        let bounds = (0..self.n_vars())
            .map(|k| (self.lower[k] - y[k]).max(y[k] - self.upper[k]))
            .fold(f64::NEG_INFINITY, f64::max);
        rows.max(bounds)
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        dot(&self.objective, y)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Optimal point; empty unless `status` is optimal.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

pub trait LpSolver: Send + Sync {
    fn solve(&self, lp: &LinearProgram) -> Result<LpOutcome>;
}

/// Dense two-phase tableau simplex on the dual problem.
#[derive(Clone, Debug)]
pub struct DenseSimplex {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Non-improving pivots tolerated before switching to Bland's rule.
    pub stall_limit: usize,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            tolerance: 1e-9,
            stall_limit: 50,
        }
    }
}

struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    /// Unpivoted copy of `data`, used to rebuild the tableau from the basis.
    orig: Vec<f64>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.data[r * w + c];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v /= p;
        }
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(prow.iter()) {
                *v -= f * pv;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Recomputes `B⁻¹ A` and the reduced costs from the original matrix,
    /// discarding accumulated rounding. Returns false on a singular basis.
    fn refactor(&mut self, cost: &dyn Fn(usize) -> f64) -> bool {
        let (n, w) = (self.rows, self.width);
        let mut b = vec![0.0; n * n];
        for (i, &j) in self.basis.iter().enumerate() {
            for k in 0..n {
                b[k * n + i] = self.orig[k * w + j];
            }
        }
        let Some(inv) = invert(&b, n) else {
            return false;
        };
        for i in 0..n {
            let row = &mut self.data[i * w..(i + 1) * w];
            row.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..n {
                let f = inv[i * n + k];
                if f != 0.0 {
                    for (v, o) in row.iter_mut().zip(&self.orig[k * w..(k + 1) * w]) {
                        *v += f * o;
                    }
                }
            }
        }
        for (i, &j) in self.basis.iter().enumerate() {
            for k in 0..n {
                self.data[k * w + j] = if k == i { 1.0 } else { 0.0 };
            }
        }
        for j in 0..w {
            let base = if j == w - 1 { 0.0 } else { cost(j) };
            self.obj[j] = base - (0..n).map(|i| cost(self.basis[i]) * self.data[i * w + j]).sum::<f64>();
        }
        for &j in &self.basis {
            self.obj[j] = 0.0;
        }
        true
    }
}

/// Inverse of a dense `n × n` matrix by Gauss-Jordan with partial pivoting.
fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))?;
        if m[piv * n + col].abs() < 1e-14 {
            return None;
        }
        for k in 0..n {
            m.swap(col * n + k, piv * n + k);
            inv.swap(col * n + k, piv * n + k);
        }
        let p = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != 0.0 {
                    for k in 0..n {
                        m[r * n + k] -= f * m[col * n + k];
                        inv[r * n + k] -= f * inv[col * n + k];
                    }
                }
            }
        }
    }
    Some(inv)
}

enum Phase {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl DenseSimplex {
    fn iterate(&self, t: &mut Tableau, allowed: usize, cost: &dyn Fn(usize) -> f64, iterations: &mut usize) -> Phase {
        const REFACTOR_EVERY: usize = 64;
        let tol = self.tolerance;
        let mut stall = 0usize;
        let mut last = t.obj[t.width - 1];
        // columns rejected as numerically ambiguous rays
        let mut skipped = vec![false; allowed];
        let mut since_refactor = 0usize;
        loop {
            if *iterations >= self.max_iterations {
                return Phase::IterationLimit;
            }
            let bland = stall >= self.stall_limit;
            let mut enter = None;
            let mut best = -tol;
            for j in 0..allowed {
                let d = t.obj[j];
                if d < best && !skipped[j] {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = enter else {
                // confirm on a fresh factorization before stopping
                if since_refactor > 0 && t.refactor(cost) {
                    since_refactor = 0;
                    skipped.iter_mut().for_each(|b| *b = false);
                    continue;
                }
                return Phase::Optimal;
            };
            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..t.rows {
                let a = t.at(i, c);
                if a > tol {
                    let ratio = t.rhs(i) / a;
                    let better = match leave {
                        None => true,
                        Some((r, best_ratio, best_a)) => {
                            if ratio < best_ratio - tol {
                                true
                            } else if ratio <= best_ratio + tol {
                                if bland {
                                    t.basis[i] < t.basis[r]
                                } else {
                                    a > best_a
                                }
                            } else {
                                false
                            }
                        }
                    };
                    if better {
                        leave = Some((i, ratio, a));
                    }
                }
            }
            let Some((r, _, _)) = leave else {
                if since_refactor > 0 && t.refactor(cost) {
                    since_refactor = 0;
                    continue;
                }
                // a ray needs a clearly negative reduced cost; anything else is drift
                if t.obj[c] > -1e-6 || (0..t.rows).any(|i| t.at(i, c) > 0.0) {
                    skipped[c] = true;
                    continue;
                }
                return Phase::Unbounded;
            };
            t.pivot(r, c);
            *iterations += 1;
            since_refactor += 1;
            if since_refactor >= REFACTOR_EVERY && t.refactor(cost) {
                since_refactor = 0;
            }
            if skipped.iter().any(|&b| b) {
                skipped.iter_mut().for_each(|b| *b = false);
            }
            // the objective row holds minus the current objective in its last entry
            let now = t.obj[t.width - 1];
            if now > last + tol {
                last = now;
                stall = 0;
            } else {
                stall += 1;
            }
        }
    }
}

impl LpSolver for DenseSimplex {
    fn solve(&self, lp: &LinearProgram) -> Result<LpOutcome> {
        lp.validate()?;
        let n = lp.n_vars();
        let tol = self.tolerance;

        // Shift y = lower + y', y' >= 0; finite upper bounds become rows.
        let mut cols: Vec<(Vec<f64>, f64)> = Vec::with_capacity(lp.rows.len() + n);
        for r in &lp.rows {
            cols.push((r.coeffs.clone(), r.rhs - dot(&r.coeffs, &lp.lower)));
        }
        for k in 0..n {
            if lp.upper[k].is_finite() {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                cols.push((e, lp.upper[k] - lp.lower[k]));
            }
        }
        let m = cols.len();
        // columns: λ (m), s (n), artificials (n), rhs
        let width = m + 2 * n + 1;
        let mut t = Tableau {
            rows: n,
            width,
            data: vec![0.0; n * width],
            obj: vec![0.0; width],
            basis: (0..n).map(|k| m + n + k).collect(),
            orig: Vec::new(),
        };
        for k in 0..n {
            let sign = if -lp.objective[k] < 0.0 { -1.0 } else { 1.0 };
            let row = &mut t.data[k * width..(k + 1) * width];
            for (j, (a, _)) in cols.iter().enumerate() {
                row[j] = sign * a[k];
            }
            row[m + k] = -sign;
            row[m + n + k] = 1.0;
            row[width - 1] = sign * -lp.objective[k];
        }
        t.orig = t.data.clone();
        // phase 1: minimize the sum of artificials
        for j in 0..width {
            if (m + n..m + 2 * n).contains(&j) {
                continue;
            }
            t.obj[j] = -(0..n).map(|k| t.at(k, j)).sum::<f64>();
        }
        let phase_one_cost = |j: usize| if (m + n..m + 2 * n).contains(&j) { 1.0 } else { 0.0 };
        let mut iterations = 0;
        match self.iterate(&mut t, m + n, &phase_one_cost, &mut iterations) {
            Phase::Optimal => {}
            Phase::Unbounded => return Err(Error::Lp("phase one reported an unbounded ray".into())),
            Phase::IterationLimit => return Err(Error::Lp(format!("iteration limit {} reached", self.max_iterations))),
        }
        let scale = 1.0 + lp.objective.iter().map(|c| c.abs()).fold(0.0, f64::max);
        if -t.obj[width - 1] > tol * scale * n as f64 {
            // dual infeasible: the primal is unbounded or infeasible
            return Ok(LpOutcome {
                status: LpStatus::Unbounded,
                x: Vec::new(),
                objective: f64::NEG_INFINITY,
                iterations,
            });
        }
        // drive remaining artificials out of the basis
        let mut redundant = false;
        for i in 0..n {
            if t.basis[i] >= m + n {
                let pick = (0..m + n)
                    .filter(|&j| t.at(i, j).abs() > tol)
                    .max_by(|&a, &b| t.at(i, a).abs().total_cmp(&t.at(i, b).abs()));
                match pick {
                    Some(j) => t.pivot(i, j),
                    None => redundant = true,
                }
            }
        }
        // phase 2: dual objective b'·λ
        let cost = |j: usize| if j < m { cols[j].1 } else { 0.0 };
        for j in 0..width {
            t.obj[j] = if j == width - 1 { 0.0 } else { cost(j) };
        }
        for i in 0..n {
            let cb = if t.basis[i] < m + n { cost(t.basis[i]) } else { 0.0 };
            if cb != 0.0 {
                for j in 0..width {
                    t.obj[j] -= cb * t.at(i, j);
                }
            }
        }
        match self.iterate(&mut t, m + n, &cost, &mut iterations) {
            Phase::Optimal => {}
            Phase::Unbounded => {
                return Ok(LpOutcome {
                    status: LpStatus::Infeasible,
                    x: Vec::new(),
                    objective: f64::INFINITY,
                    iterations,
                })
            }
            Phase::IterationLimit => return Err(Error::Lp(format!("iteration limit {} reached", self.max_iterations))),
        }

        // Primal values are the simplex multipliers of the dual rows.
        let from_tableau: Vec<f64> = (0..n).map(|k| t.obj[m + k]).collect();
        let y_shift = if redundant {
            from_tableau
        } else {
            // B^T π = c_B on the unscaled dual matrix, which is more accurate
            // than the accumulated reduced costs
            let mut mat = vec![0.0; n * n];
            let mut rhs = vec![0.0; n];
            for (i, &j) in t.basis.iter().enumerate() {
                for k in 0..n {
                    mat[i * n + k] = if j < m {
                        cols[j].0[k]
                    } else if j - m == k {
                        -1.0
                    } else {
                        0.0
                    };
                }
                rhs[i] = cost(j);
            }
            solve_dense(&mut mat, &mut rhs, n).unwrap_or(from_tableau)
        };
        let x: Vec<f64> = (0..n)
            .map(|k| (lp.lower[k] + y_shift[k].max(0.0)).min(lp.upper[k]))
            .collect();
        Ok(LpOutcome {
            status: LpStatus::Optimal,
            objective: lp.objective_value(&x),
            x,
            iterations,
        })
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-13 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for i in col + 1..n {
            let f = a[i * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[i * n + k] -= f * a[col * n + k];
                }
                b[i] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i * n + k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(lp: &LinearProgram) -> LpOutcome {
        DenseSimplex::default().solve(lp).unwrap()
    }

    #[test]
    fn textbook_maximization() {
        // max 3a + 5b st a <= 4, 2b <= 12, 3a + 2b <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(vec![-3.0, -5.0], vec![0.0, 0.0], vec![f64::INFINITY; 2]);
        lp.push(vec![1.0, 0.0], 4.0);
        lp.push(vec![0.0, 2.0], 12.0);
        lp.push(vec![3.0, 2.0], 18.0);
        let out = solve(&lp);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.x[0] - 2.0).abs() < 1e-9 && (out.x[1] - 6.0).abs() < 1e-9);
        assert!((out.objective + 36.0).abs() < 1e-9);
    }

    #[test]
    fn negative_lower_bounds_and_free_direction() {
        // min a + b st a >= -1, b >= -2 (as rows), a, b in [-10, 10]
        let mut lp = LinearProgram::new(vec![1.0, 1.0], vec![-10.0, -10.0], vec![10.0, 10.0]);
        lp.push(vec![-1.0, 0.0], 1.0);
        lp.push(vec![0.0, -1.0], 2.0);
        let out = solve(&lp);
        assert!((out.objective + 3.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0], vec![0.0], vec![5.0]);
        lp.push(vec![-1.0], -6.0);
        assert_eq!(solve(&lp).status, LpStatus::Infeasible);
        let lp = LinearProgram::new(vec![-1.0], vec![0.0], vec![f64::INFINITY]);
        assert_eq!(solve(&lp).status, LpStatus::Unbounded);
    }

    #[test]
    fn rejects_malformed_programs() {
        let mut lp = LinearProgram::new(vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]);
        lp.push(vec![1.0], 1.0);
        assert!(DenseSimplex::default().solve(&lp).is_err());
        let lp = LinearProgram::new(vec![1.0], vec![f64::NEG_INFINITY], vec![1.0]);
        assert!(DenseSimplex::default().solve(&lp).is_err());
    }

    /// Enumerates every vertex of a 3-variable program.
    fn vertex_minimum(lp: &LinearProgram) -> Option<f64> {
        let mut planes: Vec<(Vec<f64>, f64)> = lp.rows.iter().map(|r| (r.coeffs.clone(), r.rhs)).collect();
        for k in 0..3 {
            let mut e = vec![0.0; 3];
            e[k] = 1.0;
            planes.push((e.clone(), lp.upper[k]));
            e[k] = -1.0;
            planes.push((e, -lp.lower[k]));
        }
        let mut best: Option<f64> = None;
        for i in 0..planes.len() {
            for j in i + 1..planes.len() {
                for k in j + 1..planes.len() {
                    let mut a: Vec<f64> = [&planes[i].0, &planes[j].0, &planes[k].0].iter().flat_map(|v| v.iter().copied()).collect();
                    let mut b = vec![planes[i].1, planes[j].1, planes[k].1];
                    if let Some(x) = solve_dense(&mut a, &mut b, 3) {
                        if lp.max_violation(&x) <= 1e-9 {
                            let v = lp.objective_value(&x);
                            best = Some(best.map_or(v, |b: f64| b.min(v)));
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn matches_vertex_enumeration_on_random_programs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let obj: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut lp = LinearProgram::new(obj, vec![-1.0, -2.0, 0.0], vec![1.0, 2.0, 3.0]);
            for _ in 0..rng.gen_range(0..12) {
                let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                lp.push(c, rng.gen_range(-0.5..1.0));
            }
            let out = solve(&lp);
            match vertex_minimum(&lp) {
                Some(v) => {
                    assert_eq!(out.status, LpStatus::Optimal);
                    assert!(lp.max_violation(&out.x) <= 1e-9);
                    assert!((out.objective - v).abs() < 1e-7, "{} vs {}", out.objective, v);
                }
                None => assert_eq!(out.status, LpStatus::Infeasible),
            }
        }
    }

    #[test]
    fn degenerate_program_terminates() {
        // many copies of the same tight row
        let mut lp = LinearProgram::new(vec![-1.0, -1.0], vec![0.0, 0.0], vec![1.0, 1.0]);
        for _ in 0..200 {
            lp.push(vec![1.0, 1.0], 1.0);
            lp.push(vec![1.0, 0.0], 1.0);
        }
        let out = solve(&lp);
        assert!((out.objective + 1.0).abs() < 1e-9);
    }
}
