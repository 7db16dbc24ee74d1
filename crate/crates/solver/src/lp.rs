//! Dense two-phase simplex for small linear programs.
//!
//! Problems carry per-variable bounds, sparse `<=` rows and sparse `=` rows.
//! Bounds are folded into the standard form by shifting/splitting columns;
//! finite upper bounds become explicit rows. Pivoting uses Bland's rule, so
//! the method terminates on degenerate problems.

use crate::{SolverError, SparseRow, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Rows `a·x <= rhs`.
    pub inequalities: Vec<SparseRow>,
    /// Rows `a·x == rhs`.
    pub equalities: Vec<SparseRow>,
}

impl LinearProgram {
    /// New program with every variable bounded to `[0, +inf)`.
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            sense,
            objective,
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            inequalities: Vec::new(),
            equalities: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn add_le(&mut self, coefs: Vec<(usize, f64)>, rhs: f64) {
        self.inequalities.push(SparseRow::new(coefs, rhs));
    }

    pub fn add_eq(&mut self, coefs: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(SparseRow::new(coefs, rhs));
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest absolute violation of any bound or row at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.inequalities {
            worst = worst.max(row.dot(x) - row.rhs);
        }
        for row in &self.equalities {
            worst = worst.max((row.dot(x) - row.rhs).abs());
        }
        worst
    }

    fn check(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::Malformed("bound vectors have wrong length".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(SolverError::Malformed("non-finite objective coefficient".into()));
        }
        for row in self.inequalities.iter().chain(&self.equalities) {
            if let Some(i) = row.max_index() {
                if i >= n {
                    return Err(SolverError::Malformed(format!(
                        "row references variable {i} but only {n} exist"
                    )));
                }
            }
            if !row.rhs.is_finite() || row.coefs.iter().any(|(_, c)| !c.is_finite()) {
                return Err(SolverError::Malformed("non-finite row coefficient".into()));
            }
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(SolverError::Malformed(format!("NaN bound on variable {j}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LpSettings {
    /// Pivot / reduced-cost / feasibility tolerance on the row-normalized tableau.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for LpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: Status,
    /// Simplex pivots over both phases.
    pub iterations: usize,
    pub max_violation: f64,
}

/// How an original variable is expressed in terms of non-negative columns.
#[derive(Debug, Clone)]
struct ColumnMap {
    offset: f64,
    cols: Vec<(usize, f64)>,
}

#[derive(Clone, Copy, PartialEq)]
enum RowKind {
    Le,
    Eq,
}

struct Tableau {
    /// (m + 1) x (ncols + 1), row-major; last row is the cost row, last column the rhs.
    data: Vec<f64>,
    width: usize,
    m: usize,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.width + self.width - 1]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let p = self.at(row, col);
        for j in 0..w {
            self.data[row * w + j] /= p;
        }
        for i in 0..=self.m {
            if i == row {
                continue;
            }
            let f = self.data[i * w + col];
            if f != 0.0 {
                for j in 0..w {
                    let v = self.data[row * w + j];
                    if v != 0.0 {
                        self.data[i * w + j] -= f * v;
                    }
                }
                self.data[i * w + col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Writes `c - c_B^T T` into the cost row.
    fn set_costs(&mut self, costs: &[f64]) {
        let w = self.width;
        let m = self.m;
        for j in 0..w {
            let mut r = if j < w - 1 { costs[j] } else { 0.0 };
            for i in 0..m {
                let cb = costs[self.basis[i]];
                if cb != 0.0 {
                    r -= cb * self.at(i, j);
                }
            }
            self.data[m * w + j] = r;
        }
    }

    /// Runs Bland-rule simplex on the current cost row. `allowed(j)` masks
    /// entering columns.
    fn run(
        &mut self,
        tol: f64,
        max_iter: usize,
        iterations: &mut usize,
        allowed: &dyn Fn(usize) -> bool,
    ) -> Status {
        let ncols = self.width - 1;
        loop {
            if *iterations >= max_iter {
                return Status::IterationLimit;
            }
            let entering = (0..ncols).find(|&j| allowed(j) && self.at(self.m, j) < -tol);
            let Some(col) = entering else {
                return Status::Optimal;
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, col);
                if a > tol {
                    let ratio = self.rhs(i).max(0.0) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - tol * br.abs().max(1.0)
                                || (ratio <= br + tol * br.abs().max(1.0)
                                    && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = best else {
                return Status::Unbounded;
            };
            self.pivot(row, col);
            *iterations += 1;
        }
    }
}

/// Solves `lp` with the two-phase simplex method.
///
/// Infeasible and unbounded programs are reported through
/// [`LpSolution::status`]; malformed input is an error.
pub fn solve_lp(lp: &LinearProgram, settings: &LpSettings) -> Result<LpSolution, SolverError> {
    lp.check()?;
    let n = lp.num_vars();
    let tol = settings.tol;
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };

    let infeasible = |n: usize| LpSolution {
        x: vec![0.0; n],
        objective: f64::NAN,
        status: Status::Infeasible,
        iterations: 0,
        max_violation: f64::INFINITY,
    };

    // Column mapping and extra bound rows.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if l > u {
            return Ok(infeasible(n));
        }
        if l.is_finite() {
            maps.push(ColumnMap {
                offset: l,
                cols: vec![(ncols, 1.0)],
            });
            if u.is_finite() {
                bound_rows.push((vec![(ncols, 1.0)], u - l));
            }
            ncols += 1;
        } else if u.is_finite() {
            maps.push(ColumnMap {
                offset: u,
                cols: vec![(ncols, -1.0)],
            });
            ncols += 1;
        } else {
            maps.push(ColumnMap {
                offset: 0.0,
                cols: vec![(ncols, 1.0), (ncols + 1, -1.0)],
            });
            ncols += 2;
        }
    }

    // Dense rows in column space.
    let mut rows: Vec<(Vec<f64>, f64, RowKind)> = Vec::new();
    let mut push_row = |coefs: &[(usize, f64)], rhs: f64, kind: RowKind, mapped: bool| {
        let mut dense = vec![0.0; ncols];
        let mut b = rhs;
        if mapped {
            for &(j, c) in coefs {
                b -= c * maps[j].offset;
                for &(col, s) in &maps[j].cols {
                    dense[col] += c * s;
                }
            }
        } else {
            for &(col, c) in coefs {
                dense[col] += c;
            }
        }
        rows.push((dense, b, kind));
    };
    for row in &lp.inequalities {
        push_row(&row.coefs, row.rhs, RowKind::Le, true);
    }
    for row in &lp.equalities {
        push_row(&row.coefs, row.rhs, RowKind::Eq, true);
    }
    for (coefs, rhs) in &bound_rows {
        push_row(coefs, *rhs, RowKind::Le, false);
    }

    // Normalize rows; drop empty ones after checking them.
    let mut kept = Vec::with_capacity(rows.len());
    for (mut a, mut b, kind) in rows {
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            let ok = match kind {
                RowKind::Le => b >= -tol * (1.0 + b.abs()),
                RowKind::Eq => b.abs() <= tol * (1.0 + b.abs()),
            };
            if !ok {
                return Ok(infeasible(n));
            }
            continue;
        }
        for v in a.iter_mut() {
            *v /= scale;
        }
        b /= scale;
        kept.push((a, b, kind));
    }

    let m = kept.len();
    let n_slack = kept.iter().filter(|r| r.2 == RowKind::Le).count();
    let needs_art: Vec<bool> = kept
        .iter()
        .map(|(_, b, k)| *k == RowKind::Eq || *b < 0.0)
        .collect();
    let n_art = needs_art.iter().filter(|&&a| a).count();
    let total = ncols + n_slack + n_art;
    let width = total + 1;

    let mut data = vec![0.0; (m + 1) * width];
    let mut basis = vec![0usize; m];
    let mut slack_idx = ncols;
    let mut art_idx = ncols + n_slack;
    for (i, (a, b, kind)) in kept.iter().enumerate() {
        let flip = if *b < 0.0 { -1.0 } else { 1.0 };
        for (j, &v) in a.iter().enumerate() {
            data[i * width + j] = flip * v;
        }
        data[i * width + total] = flip * b;
        if *kind == RowKind::Le {
            data[i * width + slack_idx] = flip;
            if !needs_art[i] {
                basis[i] = slack_idx;
            }
            slack_idx += 1;
        }
        if needs_art[i] {
            data[i * width + art_idx] = 1.0;
            basis[i] = art_idx;
            art_idx += 1;
        }
    }

    let mut tab = Tableau {
        data,
        width,
        m,
        basis,
    };
    let mut iterations = 0usize;
    let art_start = ncols + n_slack;

    // Phase 1.
    if n_art > 0 {
        let mut c1 = vec![0.0; total];
        for c in c1.iter_mut().skip(art_start) {
            *c = 1.0;
        }
        tab.set_costs(&c1);
        let st = tab.run(tol, settings.max_iterations, &mut iterations, &|_| true);
        if st == Status::IterationLimit {
            return Ok(LpSolution {
                status: Status::IterationLimit,
                iterations,
                ..infeasible(n)
            });
        }
        let infeas: f64 = (0..m)
            .filter(|&i| tab.basis[i] >= art_start)
            .map(|i| tab.rhs(i))
            .sum();
        let bscale = kept.iter().fold(1.0f64, |s, r| s.max(r.1.abs()));
        if infeas > tol * bscale * 10.0 {
            return Ok(LpSolution {
                iterations,
                ..infeasible(n)
            });
        }
        // Drive remaining artificials out of the basis.
        let mut redundant = Vec::new();
        for i in 0..m {
            if tab.basis[i] >= art_start {
                let col = (0..art_start).find(|&j| tab.at(i, j).abs() > tol);
                match col {
                    Some(j) => {
                        tab.pivot(i, j);
                        iterations += 1;
                    }
                    None => redundant.push(i),
                }
            }
        }
        if !redundant.is_empty() {
            // Remove redundant rows (their artificial stays at zero level).
            let mut new_data = Vec::with_capacity((m + 1 - redundant.len()) * width);
            let mut new_basis = Vec::new();
            for i in 0..m {
                if !redundant.contains(&i) {
                    new_data.extend_from_slice(&tab.data[i * width..(i + 1) * width]);
                    new_basis.push(tab.basis[i]);
                }
            }
            new_data.extend_from_slice(&tab.data[m * width..(m + 1) * width]);
            tab = Tableau {
                data: new_data,
                width,
                m: new_basis.len(),
                basis: new_basis,
            };
        }
    }

    // Phase 2.
    let mut c2 = vec![0.0; total];
    for (j, map) in maps.iter().enumerate() {
        for &(col, s) in &map.cols {
            c2[col] += sign * lp.objective[j] * s;
        }
    }
    tab.set_costs(&c2);
    let status = tab.run(tol, settings.max_iterations, &mut iterations, &|j| j < art_start);

    let mut cols = vec![0.0; total];
    for i in 0..tab.m {
        cols[tab.basis[i]] = tab.rhs(i).max(0.0);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|map| map.offset + map.cols.iter().map(|&(c, s)| s * cols[c]).sum::<f64>())
        .collect();
    let objective = lp.objective_value(&x);
    let max_violation = lp.max_violation(&x);
    Ok(LpSolution {
        x,
        objective,
        status,
        iterations,
        max_violation,
    })
}
