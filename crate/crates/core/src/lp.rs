//! Dense two-phase simplex with Bland's pivoting rule.
//!
//! The programs solved here are tiny (two variables for action ranges, one
//! per reward for contracts), so the tableau is kept dense.

use crate::error::{Error, Result};

/// Absolute feasibility tolerance on constraints, scaled by row magnitude.
pub const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-12;
const COST_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub sense: Sense,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// New program whose variables default to `[0, +inf)`.
    pub fn new(objective: Vec<f64>, sense: Sense) -> Self {
        let n = objective.len();
        Self {
            objective,
            sense,
            constraints: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, relation: Relation, bound: f64) -> &mut Self {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            bound,
        });
        self
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    fn check(&self) -> Result<()> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch("bound vectors must match objective length".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidValue("objective coefficients must be finite".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "constraint {i} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if c.coeffs.iter().any(|a| !a.is_finite()) || !c.bound.is_finite() {
                return Err(Error::InvalidValue(format!("constraint {i} has non-finite data")));
            }
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(Error::InvalidValue(format!("bounds of variable {j} are invalid")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Pivoting stalled or the final point failed re-substitution.
    NumericFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub point: Vec<f64>,
    pub value: f64,
}

impl LpSolution {
    fn status(status: LpStatus) -> Self {
        Self {
            status,
            point: Vec::new(),
            value: f64::NAN,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// How an original variable is expressed through nonnegative columns.
struct VarMap {
    offset: f64,
    cols: Vec<(usize, f64)>,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_cols: usize,
}

enum Outcome {
    Done,
    Unbounded,
    Stalled,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.n_cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= piv;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (dj, t) in d.iter_mut().zip(&self.rows[i][..self.n_cols]) {
                    *dj -= cb * t;
                }
            }
        }
        d
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis
            .iter()
            .enumerate()
            .map(|(i, &b)| cost[b] * self.rhs(i))
            .sum()
    }

    /// Minimizes `cost` over the current basis. Columns `>= allowed` never enter.
    fn minimize(&mut self, cost: &[f64], allowed: usize, max_iter: usize) -> Outcome {
        for _ in 0..max_iter {
            let d = self.reduced_costs(cost);
            let Some(enter) = (0..allowed).find(|&j| d[j] < -COST_TOL) else {
                return Outcome::Done;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][enter];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                            if ratio < best && !tie || tie && self.basis[i] < self.basis[r] {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Outcome::Unbounded,
                Some((r, _)) => self.pivot(r, enter),
            }
        }
        Outcome::Stalled
    }
}

/// Solves `lp`, returning an optimal basic solution or a status.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.check()?;
    let n = lp.n_vars();

    // Column substitution for bounds.
    let mut maps = Vec::with_capacity(n);
    let mut n_std = 0;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        if lo > hi {
            return Ok(LpSolution::status(LpStatus::Infeasible));
        }
        let map = if lo.is_finite() {
            if hi.is_finite() {
                bound_rows.push((n_std, hi - lo));
            }
            VarMap {
                offset: lo,
                cols: vec![(n_std, 1.0)],
            }
        } else if hi.is_finite() {
            VarMap {
                offset: hi,
                cols: vec![(n_std, -1.0)],
            }
        } else {
            n_std += 1;
            VarMap {
                offset: 0.0,
                cols: vec![(n_std - 1, 1.0), (n_std, -1.0)],
            }
        };
        n_std += 1;
        maps.push(map);
    }

    // Rows over standard columns: (coeffs, relation, rhs).
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &lp.constraints {
        let mut coeffs = vec![0.0; n_std];
        let mut rhs = c.bound;
        for (j, &a) in c.coeffs.iter().enumerate() {
            rhs -= a * maps[j].offset;
            for &(col, s) in &maps[j].cols {
                coeffs[col] += a * s;
            }
        }
        rows.push((coeffs, c.relation, rhs));
    }
    for &(col, width) in &bound_rows {
        let mut coeffs = vec![0.0; n_std];
        coeffs[col] = 1.0;
        rows.push((coeffs, Relation::Le, width));
    }
    for row in rows.iter_mut() {
        if row.2 < 0.0 {
            row.0.iter_mut().for_each(|v| *v = -*v);
            row.2 = -row.2;
            row.1 = match row.1 {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let art_start = n_std + n_slack;
    let n_cols = art_start + n_art;
    let m = rows.len();

    let mut tab = Tableau {
        rows: Vec::with_capacity(m),
        basis: Vec::with_capacity(m),
        n_cols,
    };
    let (mut s, mut a) = (n_std, art_start);
    for (coeffs, rel, rhs) in rows {
        let mut row = vec![0.0; n_cols + 1];
        row[..n_std].copy_from_slice(&coeffs);
        row[n_cols] = rhs;
        match rel {
            Relation::Le => {
                row[s] = 1.0;
                tab.basis.push(s);
                s += 1;
            }
            Relation::Ge => {
                row[s] = -1.0;
                s += 1;
                row[a] = 1.0;
                tab.basis.push(a);
                a += 1;
            }
            Relation::Eq => {
                row[a] = 1.0;
                tab.basis.push(a);
                a += 1;
            }
        }
        tab.rows.push(row);
    }

    let max_iter = 50 * (m + n_cols) + 1000;

    // Phase 1.
    if n_art > 0 {
        let mut cost = vec![0.0; n_cols];
        cost[art_start..].iter_mut().for_each(|c| *c = 1.0);
        match tab.minimize(&cost, n_cols, max_iter) {
            Outcome::Done => {}
            Outcome::Unbounded | Outcome::Stalled => {
                return Ok(LpSolution::status(LpStatus::NumericFailure));
            }
        }
        let scale = 1.0 + tab.rows.iter().map(|r| r[n_cols].abs()).fold(0.0, f64::max);
        if tab.objective(&cost) > FEAS_TOL * scale {
            return Ok(LpSolution::status(LpStatus::Infeasible));
        }
        // Drive artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < tab.rows.len() {
            if tab.basis[i] >= art_start {
                match (0..art_start).find(|&j| tab.rows[i][j].abs() > 1e-9) {
                    Some(j) => {
                        tab.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        tab.rows.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    // Phase 2.
    let mut cost = vec![0.0; n_cols];
    for (j, &c) in lp.objective.iter().enumerate() {
        let c = if lp.sense == Sense::Maximize { -c } else { c };
        for &(col, sgn) in &maps[j].cols {
            cost[col] += c * sgn;
        }
    }
    match tab.minimize(&cost, art_start, max_iter) {
        Outcome::Done => {}
        Outcome::Unbounded => return Ok(LpSolution::status(LpStatus::Unbounded)),
        Outcome::Stalled => return Ok(LpSolution::status(LpStatus::NumericFailure)),
    }

    let mut y = vec![0.0; n_cols];
    for (i, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(i);
    }
    let point: Vec<f64> = maps
        .iter()
        .map(|m| m.offset + m.cols.iter().map(|&(c, s)| s * y[c]).sum::<f64>())
        .collect();

    if !satisfies(lp, &point) {
        return Ok(LpSolution::status(LpStatus::NumericFailure));
    }
    let value = lp.objective.iter().zip(&point).map(|(c, x)| c * x).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        point,
        value,
    })
}

/// Re-substitution check used on every optimal point.
pub fn satisfies(lp: &LinearProgram, x: &[f64]) -> bool {
    for c in &lp.constraints {
        let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
        let mag: f64 = c.coeffs.iter().zip(x).map(|(a, v)| (a * v).abs()).fold(c.bound.abs(), f64::max);
        let tol = FEAS_TOL * mag.max(1.0);
        let ok = match c.relation {
            Relation::Le => lhs <= c.bound + tol,
            Relation::Ge => lhs >= c.bound - tol,
            Relation::Eq => (lhs - c.bound).abs() <= tol,
        };
        if !ok {
            return false;
        }
    }
    x.iter().enumerate().all(|(j, &v)| {
        let tol = FEAS_TOL * v.abs().max(1.0);
        v >= lp.lower[j] - tol && v <= lp.upper[j] + tol
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_variable_bounded() {
        let mut lp = LinearProgram::new(vec![1.0], Sense::Maximize);
        lp.constrain(vec![1.0], Relation::Le, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.point[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_with_nonnegativity() {
        let mut lp = LinearProgram::new(vec![1.0], Sense::Maximize);
        lp.constrain(vec![1.0], Relation::Le, -1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn two_variable_textbook() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0], Sense::Maximize);
        lp.constrain(vec![1.0, 2.0], Relation::Le, 4.0)
            .constrain(vec![3.0, 1.0], Relation::Le, 6.0);
        let sol = solve_lp(&lp).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.value - 2.8).abs() < 1e-12, "{sol:?}");
        assert!((sol.point[0] - 1.6).abs() < 1e-12);
        assert!((sol.point[1] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::new(vec![1.0, 0.0], Sense::Maximize);
        lp.constrain(vec![1.0, -1.0], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_free_variables() {
        // minimize x + 2y, x + y = 1, x free, -1 <= y <= 3  ->  y = -1, x = 2.
        let mut lp = LinearProgram::new(vec![1.0, 2.0], Sense::Minimize);
        lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY).set_bounds(1, -1.0, 3.0);
        lp.constrain(vec![1.0, 1.0], Relation::Eq, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.point[0] - 2.0).abs() < 1e-12 && (sol.point[1] + 1.0).abs() < 1e-12);
        assert!((sol.value - 0.0).abs() < 1e-12);
    }

    #[test]
    fn upper_bound_only_variable() {
        // maximize x with x <= 5 as a bound and no lower bound.
        let mut lp = LinearProgram::new(vec![1.0], Sense::Maximize);
        lp.set_bounds(0, f64::NEG_INFINITY, 5.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.point[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0], Sense::Maximize);
        lp.constrain(vec![1.0, 1.0], Relation::Eq, 1.0)
            .constrain(vec![2.0, 2.0], Relation::Eq, 2.0)
            .constrain(vec![1.0, 0.0], Relation::Ge, 0.25);
        let sol = solve_lp(&lp).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beale_cycling_example_terminates() {
        // Classic example on which the largest-coefficient rule cycles.
        let mut lp = LinearProgram::new(vec![0.75, -150.0, 0.02, -6.0], Sense::Maximize);
        lp.constrain(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0)
            .constrain(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0)
            .constrain(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.value - 0.05).abs() < 1e-12);
    }

    #[test]
    fn malformed_program_is_an_error() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0], Sense::Maximize);
        lp.constrain(vec![1.0], Relation::Le, 1.0);
        assert!(solve_lp(&lp).is_err());
    }

    // --- vertex enumeration oracle -------------------------------------

    fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for i in 0..n {
                if i != col {
                    let f = a[i][col] / a[col][col];
                    for k in col..n {
                        a[i][k] -= f * a[col][k];
                    }
                    b[i] -= f * b[col];
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        if n < k {
            return vec![];
        }
        let mut out = combinations(n - 1, k);
        for mut c in combinations(n - 1, k - 1) {
            c.push(n - 1);
            out.push(c);
        }
        out
    }

    /// Best vertex of a box-bounded program, or None if no vertex is feasible.
    fn vertex_oracle(lp: &LinearProgram) -> Option<f64> {
        let n = lp.n_vars();
        let mut planes: Vec<(Vec<f64>, f64)> = lp.constraints.iter().map(|c| (c.coeffs.clone(), c.bound)).collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            planes.push((e.clone(), lp.lower[j]));
            planes.push((e, lp.upper[j]));
        }
        let mut best: Option<f64> = None;
        for combo in combinations(planes.len(), n) {
            let a = combo.iter().map(|&i| planes[i].0.clone()).collect();
            let b = combo.iter().map(|&i| planes[i].1).collect();
            let Some(x) = solve_square(a, b) else { continue };
            let feasible = lp.constraints.iter().all(|c| {
                let lhs: f64 = c.coeffs.iter().zip(&x).map(|(a, v)| a * v).sum();
                match c.relation {
                    Relation::Le => lhs <= c.bound + 1e-9,
                    Relation::Ge => lhs >= c.bound - 1e-9,
                    Relation::Eq => (lhs - c.bound).abs() <= 1e-9,
                }
            }) && x.iter().enumerate().all(|(j, &v)| v >= lp.lower[j] - 1e-9 && v <= lp.upper[j] + 1e-9);
            if feasible {
                let val: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                best = Some(match (best, lp.sense) {
                    (None, _) => val,
                    (Some(b), Sense::Maximize) => b.max(val),
                    (Some(b), Sense::Minimize) => b.min(val),
                });
            }
        }
        best
    }

    fn small_lp() -> impl Strategy<Value = LinearProgram> {
        (1usize..=3).prop_flat_map(|n| {
            let coeff = -5i32..=5;
            (
                prop::collection::vec(coeff.clone(), n),
                prop::collection::vec((prop::collection::vec(coeff, n), 0u8..3, -10i32..=10), 0..5),
                any::<bool>(),
            )
                .prop_map(move |(obj, cons, max)| {
                    let sense = if max { Sense::Maximize } else { Sense::Minimize };
                    let mut lp = LinearProgram::new(obj.iter().map(|&c| c as f64).collect(), sense);
                    for j in 0..n {
                        lp.set_bounds(j, -3.0, 4.0);
                    }
                    for (a, rel, b) in cons {
                        let rel = [Relation::Le, Relation::Ge, Relation::Eq][rel as usize];
                        lp.constrain(a.iter().map(|&v| v as f64).collect(), rel, b as f64);
                    }
                    lp
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]

        #[test]
        fn matches_vertex_enumeration(lp in small_lp()) {
            let sol = solve_lp(&lp).unwrap();
            match vertex_oracle(&lp) {
                None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
                Some(best) => {
                    prop_assert_eq!(sol.status, LpStatus::Optimal);
                    prop_assert!((sol.value - best).abs() <= 1e-9 * (1.0 + best.abs()),
                        "simplex {} vs vertices {}", sol.value, best);
                    prop_assert!(satisfies(&lp, &sol.point));
                }
            }
        }
    }
}
