//! Log-barrier interior-point solver for structured smooth convex programs.
//!
//! A [`ConvexProblem`] is a sum of convex objective atoms subject to affine
//! equalities and smooth convex inequalities `g(x) <= 0`. Every atom reads
//! its arguments through sparse affine maps of the decision vector, so the
//! same machinery serves the trajectory subproblem (where positions and
//! velocities are affine in the accelerations) and small generic tests.
//!
//! The solver is a classic barrier method: centering by equality-constrained
//! Newton steps with backtracking, then `t <- mu * t` until the duality-gap
//! bound `m / t` is small. When the start point is feasible but not strictly
//! inside every inequality, a phase-I problem `min s  s.t.  g_i(x)/c_i <= s`
//! recovers an interior point first. If no interior point exists the start is
//! returned unchanged.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::{Affine, SolverError, SparseRow, Status};

/// Objective atoms. Each is convex on its domain.
#[derive(Debug, Clone)]
pub enum ObjectiveTerm {
    /// `arg(x)`.
    Linear(Affine),
    /// `coef * ||arg(x)||^3`, `coef >= 0`.
    CubicNorm { coef: f64, arg: Vec<Affine> },
    /// `coef / arg(x)`, domain `arg > 0`, `coef >= 0`.
    Reciprocal { coef: f64, arg: Affine },
    /// `coef * ||num(x)||^2 / den(x)`, domain `den > 0`, `coef >= 0`.
    QuadOverLin {
        coef: f64,
        num: Vec<Affine>,
        den: Affine,
    },
}

/// `base(x) - curvature * ||offset(x)||^2` with `curvature >= 0`; concave.
#[derive(Debug, Clone)]
pub struct ConcaveRate {
    pub base: Affine,
    pub curvature: f64,
    pub offset: Vec<Affine>,
}

impl ConcaveRate {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d2: f64 = self.offset.iter().map(|a| a.eval(x).powi(2)).sum();
        self.base.eval(x) - self.curvature * d2
    }
}

/// Inequality constraints `g(x) <= 0`.
#[derive(Debug, Clone)]
pub enum Constraint {
    /// `expr(x) <= 0`.
    Affine(Affine),
    /// `sum_j w_j ||arg_j(x)||^2 + linear(x) <= 0`, every `w_j >= 0`.
    Quadratic {
        squares: Vec<(f64, Vec<Affine>)>,
        linear: Affine,
    },
    /// `sum_j bits_j / rate_j(x) <= budget(x)`, `bits_j >= 0`, domain `rate_j > 0`.
    BitOverRate {
        terms: Vec<(f64, ConcaveRate)>,
        budget: Affine,
    },
    /// `sum_j terms_j(x) <= bound(x)` over the objective atoms.
    Atoms {
        terms: Vec<ObjectiveTerm>,
        bound: Affine,
    },
}

#[derive(Debug, Clone, Default)]
pub struct ConvexProblem {
    pub num_vars: usize,
    pub objective: Vec<ObjectiveTerm>,
    /// Rows `a·x == rhs`.
    pub equalities: Vec<SparseRow>,
    pub inequalities: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvexSettings {
    /// Scaled feasibility tolerance (violation / constraint magnitude).
    pub tol_feas: f64,
    /// Scaled stationarity tolerance.
    pub tol_kkt: f64,
    /// Relative duality-gap target for `m / t`.
    pub tol_gap: f64,
    /// Total Newton-step budget over both phases.
    pub max_iterations: usize,
    /// Barrier growth factor.
    pub mu: f64,
}

impl Default for ConvexSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-7,
            tol_kkt: 1e-6,
            tol_gap: 1e-9,
            max_iterations: 500,
            mu: 20.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvexSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: Status,
    /// Scaled KKT stationarity residual at `x`.
    pub stationarity: f64,
    /// Largest scaled constraint violation at `x` (0 when strictly feasible).
    pub max_violation: f64,
    pub newton_iterations: usize,
    pub phase1_iterations: usize,
    /// `false` when the start point was kept (no interior, or no improvement).
    pub improved: bool,
}

// ---------------------------------------------------------------------------
// Compilation into row-grouped local maps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Linear,
    Cubic { coef: f64 },
    Reciprocal { coef: f64 },
    QuadOverLin { coef: f64 },
    AffineCon,
    /// Weights per square block; last input is the linear part.
    Quadratic,
    BitOverRate,
    /// Sum of objective atoms; last input is the negated bound.
    Atoms,
}

#[derive(Debug, Clone)]
struct Term {
    kind: Kind,
    group: usize,
    /// Position of every input inside the group's row list.
    sel: Vec<usize>,
    consts: Vec<f64>,
    /// Extra per-kind data: square weights & sizes, or bits/curvature/sizes.
    params: Vec<f64>,
    sizes: Vec<usize>,
    /// Atom kinds and input counts of an `Atoms` constraint.
    parts: Vec<(Kind, usize)>,
}

#[derive(Debug, Clone)]
struct Group {
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// r x p dense, row-major.
    jac: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Compiled {
    rows: Vec<Vec<(usize, f64)>>,
    groups: Vec<Group>,
    objective: Vec<Term>,
    constraints: Vec<Term>,
}

type RowKey = Vec<(usize, u64)>;

struct Builder {
    rows: Vec<Vec<(usize, f64)>>,
    row_index: HashMap<RowKey, usize>,
    groups: Vec<Group>,
    group_index: HashMap<Vec<usize>, usize>,
}

impl Builder {
    fn row(&mut self, a: &Affine) -> usize {
        let mut coefs: Vec<(usize, f64)> = a.coefs.iter().copied().filter(|c| c.1 != 0.0).collect();
        coefs.sort_by_key(|c| c.0);
        let key: RowKey = coefs.iter().map(|&(i, c)| (i, c.to_bits())).collect();
        if let Some(&id) = self.row_index.get(&key) {
            return id;
        }
        let id = self.rows.len();
        self.rows.push(coefs);
        self.row_index.insert(key, id);
        id
    }

    fn term(&mut self, kind: Kind, inputs: &[&Affine], params: Vec<f64>, sizes: Vec<usize>) -> Term {
        let row_ids: Vec<usize> = inputs.iter().map(|a| self.row(a)).collect();
        let mut key = row_ids.clone();
        key.sort_unstable();
        key.dedup();
        let group = match self.group_index.get(&key) {
            Some(&g) => g,
            None => {
                let mut cols: Vec<usize> = key
                    .iter()
                    .flat_map(|&r| self.rows[r].iter().map(|c| c.0))
                    .collect();
                cols.sort_unstable();
                cols.dedup();
                let p = cols.len();
                let mut jac = vec![0.0; key.len() * p];
                for (ri, &r) in key.iter().enumerate() {
                    for &(c, v) in &self.rows[r] {
                        let pos = cols.binary_search(&c).unwrap();
                        jac[ri * p + pos] += v;
                    }
                }
                let g = self.groups.len();
                self.groups.push(Group {
                    rows: key.clone(),
                    cols,
                    jac,
                });
                self.group_index.insert(key.clone(), g);
                g
            }
        };
        let grows = &self.groups[group].rows;
        let sel = row_ids
            .iter()
            .map(|r| grows.iter().position(|g| g == r).unwrap())
            .collect();
        let consts = inputs.iter().map(|a| a.constant).collect();
        Term {
            kind,
            group,
            sel,
            consts,
            params,
            sizes,
            parts: Vec::new(),
        }
    }
}

fn atom(t: &ObjectiveTerm) -> (Kind, Vec<&Affine>) {
    match t {
        ObjectiveTerm::Linear(a) => (Kind::Linear, vec![a]),
        ObjectiveTerm::CubicNorm { coef, arg } => (Kind::Cubic { coef: *coef }, arg.iter().collect()),
        ObjectiveTerm::Reciprocal { coef, arg } => (Kind::Reciprocal { coef: *coef }, vec![arg]),
        ObjectiveTerm::QuadOverLin { coef, num, den } => {
            let mut ins: Vec<&Affine> = num.iter().collect();
            ins.push(den);
            (Kind::QuadOverLin { coef: *coef }, ins)
        }
    }
}

fn compile(p: &ConvexProblem) -> Compiled {
    let mut b = Builder {
        rows: Vec::new(),
        row_index: HashMap::new(),
        groups: Vec::new(),
        group_index: HashMap::new(),
    };
    let mut objective = Vec::new();
    for t in &p.objective {
        let (kind, ins) = atom(t);
        objective.push(b.term(kind, &ins, vec![], vec![]));
    }
    let mut constraints = Vec::new();
    for c in &p.inequalities {
        let term = match c {
            Constraint::Affine(a) => b.term(Kind::AffineCon, &[a], vec![], vec![]),
            Constraint::Quadratic { squares, linear } => {
                let mut ins: Vec<&Affine> = Vec::new();
                let mut params = Vec::new();
                let mut sizes = Vec::new();
                for (w, args) in squares {
                    params.push(*w);
                    sizes.push(args.len());
                    ins.extend(args.iter());
                }
                ins.push(linear);
                b.term(Kind::Quadratic, &ins, params, sizes)
            }
            Constraint::BitOverRate { terms, budget } => {
                let mut ins: Vec<&Affine> = Vec::new();
                let mut params = Vec::new();
                let mut sizes = Vec::new();
                for (bits, rate) in terms {
                    params.push(*bits);
                    params.push(rate.curvature);
                    sizes.push(rate.offset.len());
                    ins.push(&rate.base);
                    ins.extend(rate.offset.iter());
                }
                ins.push(budget);
                b.term(Kind::BitOverRate, &ins, params, sizes)
            }
            Constraint::Atoms { terms, bound } => {
                let mut ins: Vec<&Affine> = Vec::new();
                let mut parts = Vec::new();
                for t in terms {
                    let (kind, args) = atom(t);
                    parts.push((kind, args.len()));
                    ins.extend(args);
                }
                let neg = bound.scale(-1.0);
                ins.push(&neg);
                let mut term = b.term(Kind::Atoms, &ins, vec![], vec![]);
                term.parts = parts;
                term
            }
        };
        constraints.push(term);
    }
    Compiled {
        rows: b.rows,
        groups: b.groups,
        objective,
        constraints,
    }
}

// ---------------------------------------------------------------------------
// Local (y-space) value / gradient / Hessian
// ---------------------------------------------------------------------------

/// Value, gradient and (row-major) Hessian of a term in its input space.
/// Returns `None` outside the domain.
fn local(term: &Term, y: &[f64], want_derivs: bool) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let m = y.len();
    let mut g = if want_derivs { vec![0.0; m] } else { Vec::new() };
    let mut h = if want_derivs { vec![0.0; m * m] } else { Vec::new() };
    let value = match term.kind {
        Kind::Linear | Kind::AffineCon => {
            if want_derivs {
                g[0] = 1.0;
            }
            y[0]
        }
        Kind::Cubic { coef } => {
            let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if want_derivs {
                for i in 0..m {
                    g[i] = 3.0 * coef * r * y[i];
                    if r > 0.0 {
                        for j in 0..m {
                            let id = if i == j { r } else { 0.0 };
                            h[i * m + j] = 3.0 * coef * (id + y[i] * y[j] / r);
                        }
                    }
                }
            }
            coef * r * r * r
        }
        Kind::Reciprocal { coef } => {
            let d = y[0];
            if d <= 0.0 {
                return None;
            }
            if want_derivs {
                g[0] = -coef / (d * d);
                h[0] = 2.0 * coef / (d * d * d);
            }
            coef / d
        }
        Kind::QuadOverLin { coef } => {
            let w = y[m - 1];
            if w <= 0.0 {
                return None;
            }
            let u = &y[..m - 1];
            let uu: f64 = u.iter().map(|v| v * v).sum();
            if want_derivs {
                for i in 0..m - 1 {
                    g[i] = 2.0 * coef * u[i] / w;
                    h[i * m + i] = 2.0 * coef / w;
                    h[i * m + (m - 1)] = -2.0 * coef * u[i] / (w * w);
                    h[(m - 1) * m + i] = -2.0 * coef * u[i] / (w * w);
                }
                g[m - 1] = -coef * uu / (w * w);
                h[(m - 1) * m + (m - 1)] = 2.0 * coef * uu / (w * w * w);
            }
            coef * uu / w
        }
        Kind::Quadratic => {
            let mut pos = 0;
            let mut val = 0.0;
            for (blk, &w) in term.params.iter().enumerate() {
                let sz = term.sizes[blk];
                for i in pos..pos + sz {
                    val += w * y[i] * y[i];
                    if want_derivs {
                        g[i] = 2.0 * w * y[i];
                        h[i * m + i] = 2.0 * w;
                    }
                }
                pos += sz;
            }
            if want_derivs {
                g[m - 1] = 1.0;
            }
            val + y[m - 1]
        }
        Kind::BitOverRate => {
            let mut pos = 0;
            let mut val = 0.0;
            for (blk, &sz) in term.sizes.iter().enumerate() {
                let bits = term.params[2 * blk];
                let curv = term.params[2 * blk + 1];
                let base = y[pos];
                let off = &y[pos + 1..pos + 1 + sz];
                let d2: f64 = off.iter().map(|v| v * v).sum();
                let r = base - curv * d2;
                if r <= 0.0 {
                    return None;
                }
                val += bits / r;
                if want_derivs {
                    // grad r = [1, -2 c off]; hess r = diag(0, -2c I)
                    let mut gr = vec![0.0; sz + 1];
                    gr[0] = 1.0;
                    for i in 0..sz {
                        gr[i + 1] = -2.0 * curv * off[i];
                    }
                    let a = -bits / (r * r);
                    let bcoef = 2.0 * bits / (r * r * r);
                    for i in 0..=sz {
                        g[pos + i] += a * gr[i];
                        for j in 0..=sz {
                            h[(pos + i) * m + pos + j] += bcoef * gr[i] * gr[j];
                        }
                    }
                    for i in 0..sz {
                        h[(pos + 1 + i) * m + pos + 1 + i] += 2.0 * bits * curv / (r * r);
                    }
                }
                pos += sz + 1;
            }
            if want_derivs {
                g[m - 1] = -1.0;
            }
            val - y[m - 1]
        }
        Kind::Atoms => {
            let mut pos = 0;
            let mut val = 0.0;
            for &(kind, sz) in &term.parts {
                let part = Term {
                    kind,
                    group: 0,
                    sel: Vec::new(),
                    consts: Vec::new(),
                    params: Vec::new(),
                    sizes: Vec::new(),
                    parts: Vec::new(),
                };
                let (v, pg, ph) = local(&part, &y[pos..pos + sz], want_derivs)?;
                val += v;
                if want_derivs {
                    for i in 0..sz {
                        g[pos + i] += pg[i];
                        for j in 0..sz {
                            h[(pos + i) * m + pos + j] += ph[i * sz + j];
                        }
                    }
                }
                pos += sz;
            }
            if want_derivs {
                g[m - 1] = 1.0;
            }
            val + y[m - 1]
        }
    };
    if !value.is_finite() {
        return None;
    }
    Some((value, g, h))
}

/// Typical magnitude of a constraint, used to scale phase I and violations.
fn magnitude(term: &Term, y: &[f64]) -> f64 {
    let m = y.len();
    let mag = match term.kind {
        Kind::AffineCon => y[0].abs(),
        Kind::Quadratic => {
            let mut pos = 0;
            let mut s = 0.0;
            for (blk, &w) in term.params.iter().enumerate() {
                let sz = term.sizes[blk];
                s += w * y[pos..pos + sz].iter().map(|v| v * v).sum::<f64>();
                pos += sz;
            }
            s + y[m - 1].abs()
        }
        Kind::BitOverRate => {
            let mut pos = 0;
            let mut s = 0.0;
            for (blk, &sz) in term.sizes.iter().enumerate() {
                let bits = term.params[2 * blk];
                let curv = term.params[2 * blk + 1];
                let d2: f64 = y[pos + 1..pos + 1 + sz].iter().map(|v| v * v).sum();
                let r = y[pos] - curv * d2;
                if r > 0.0 {
                    s += bits / r;
                }
                pos += sz + 1;
            }
            s + y[m - 1].abs()
        }
        Kind::Atoms => match local(term, y, false) {
            Some((v, _, _)) => (v - y[m - 1]).abs() + y[m - 1].abs(),
            None => y[m - 1].abs(),
        },
        _ => y.iter().map(|v| v.abs()).sum(),
    };
    mag.max(1e-12)
}

// ---------------------------------------------------------------------------
// Evaluation over the full vector
// ---------------------------------------------------------------------------

struct Workspace {
    row_vals: Vec<f64>,
}

impl Compiled {
    fn row_values(&self, x: &[f64], ws: &mut Workspace) {
        ws.row_vals.clear();
        ws.row_vals
            .extend(self.rows.iter().map(|r| r.iter().map(|&(i, c)| c * x[i]).sum::<f64>()));
    }

    fn inputs(&self, term: &Term, ws: &Workspace) -> Vec<f64> {
        let grows = &self.groups[term.group].rows;
        term.sel
            .iter()
            .zip(&term.consts)
            .map(|(&s, &c)| ws.row_vals[grows[s]] + c)
            .collect()
    }

    fn objective_value(&self, ws: &Workspace) -> Option<f64> {
        let mut f = 0.0;
        for t in &self.objective {
            let y = self.inputs(t, ws);
            f += local(t, &y, false)?.0;
        }
        Some(f)
    }

    /// Constraint values `g_i(x)`; `None` if some constraint leaves its domain.
    fn constraint_values(&self, ws: &Workspace) -> Option<Vec<f64>> {
        self.constraints
            .iter()
            .map(|t| {
                let y = self.inputs(t, ws);
                local(t, &y, false).map(|v| v.0)
            })
            .collect()
    }
}

/// Barrier evaluation context for one phase.
struct Phase<'a> {
    c: &'a Compiled,
    /// Per-constraint scale `1 / magnitude`.
    scale: &'a [f64],
    /// Phase I: index of the auxiliary variable `s`; the phase-I objective is `s`.
    aux: Option<usize>,
    /// Lower bound on `s` in phase I (keeps the phase-I problem bounded).
    aux_floor: f64,
    dim: usize,
}

impl Phase<'_> {
    fn shift(&self, x: &[f64]) -> f64 {
        self.aux.map_or(0.0, |i| x[i])
    }

    /// Barrier merit `t f + sum -log(sigma)`; `None` outside the domain.
    fn merit(&self, x: &[f64], t: f64, ws: &mut Workspace) -> Option<f64> {
        self.c.row_values(x, ws);
        let s = self.shift(x);
        let mut val = match self.aux {
            Some(i) => {
                let slack = x[i] - self.aux_floor;
                if slack <= 0.0 {
                    return None;
                }
                t * x[i] - slack.ln()
            }
            None => t * self.c.objective_value(ws)?,
        };
        for (ci, term) in self.c.constraints.iter().enumerate() {
            let y = self.c.inputs(term, ws);
            let g = local(term, &y, false)?.0;
            let sigma = s - self.scale[ci] * g;
            if sigma <= 0.0 {
                return None;
            }
            val -= sigma.ln();
        }
        Some(val)
    }

    /// Gradient and Hessian of the barrier merit (dense `dim x dim`).
    fn derivatives(&self, x: &[f64], t: f64, ws: &mut Workspace) -> Option<(Vec<f64>, Vec<f64>)> {
        let dim = self.dim;
        let c = self.c;
        c.row_values(x, ws);
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        let s = self.shift(x);

        // Per-group accumulators in row space.
        let mut gacc: Vec<Vec<f64>> = c.groups.iter().map(|g| vec![0.0; g.rows.len()]).collect();
        let mut hacc: Vec<Vec<f64>> = c
            .groups
            .iter()
            .map(|g| vec![0.0; g.rows.len() * g.rows.len()])
            .collect();
        // Phase-I cross terms (row space) and the ss entry.
        let mut xacc: Vec<Vec<f64>> = if self.aux.is_some() {
            c.groups.iter().map(|g| vec![0.0; g.rows.len()]).collect()
        } else {
            Vec::new()
        };
        let mut ss = 0.0;
        let mut gs = 0.0;

        let add = |term: &Term, wg: &[f64], wh: &[f64], gacc: &mut Vec<Vec<f64>>, hacc: &mut Vec<Vec<f64>>| {
            let r = c.groups[term.group].rows.len();
            let m = term.sel.len();
            let ga = &mut gacc[term.group];
            for i in 0..m {
                ga[term.sel[i]] += wg[i];
            }
            let ha = &mut hacc[term.group];
            for i in 0..m {
                let si = term.sel[i];
                for j in 0..m {
                    let v = wh[i * m + j];
                    if v != 0.0 {
                        ha[si * r + term.sel[j]] += v;
                    }
                }
            }
        };

        if let Some(i) = self.aux {
            let slack = x[i] - self.aux_floor;
            if slack <= 0.0 {
                return None;
            }
            gs += t - 1.0 / slack;
            ss += 1.0 / (slack * slack);
        } else {
            for term in &c.objective {
                let y = c.inputs(term, ws);
                let (_, g, h) = local(term, &y, true)?;
                let wg: Vec<f64> = g.iter().map(|v| t * v).collect();
                let wh: Vec<f64> = h.iter().map(|v| t * v).collect();
                add(term, &wg, &wh, &mut gacc, &mut hacc);
            }
        }

        for (ci, term) in c.constraints.iter().enumerate() {
            let y = c.inputs(term, ws);
            let (gv, g, h) = local(term, &y, true)?;
            let sc = self.scale[ci];
            let sigma = s - sc * gv;
            if sigma <= 0.0 {
                return None;
            }
            let m = y.len();
            // u = sc * g_y ; grad_x phi = u / sigma ; hess_xx = sc H / sigma + u u^T / sigma^2
            let u: Vec<f64> = g.iter().map(|v| sc * v).collect();
            let wg: Vec<f64> = u.iter().map(|v| v / sigma).collect();
            let mut wh = vec![0.0; m * m];
            for a in 0..m {
                for b in 0..m {
                    wh[a * m + b] = sc * h[a * m + b] / sigma + u[a] * u[b] / (sigma * sigma);
                }
            }
            add(term, &wg, &wh, &mut gacc, &mut hacc);
            if self.aux.is_some() {
                let xa = &mut xacc[term.group];
                for a in 0..m {
                    xa[term.sel[a]] -= u[a] / (sigma * sigma);
                }
                gs -= 1.0 / sigma;
                ss += 1.0 / (sigma * sigma);
            }
        }

        // Map every group back to x space.
        for (gi, grp) in c.groups.iter().enumerate() {
            let r = grp.rows.len();
            let p = grp.cols.len();
            let ga = &gacc[gi];
            let ha = &hacc[gi];
            if ga.iter().all(|v| *v == 0.0) && ha.iter().all(|v| *v == 0.0) {
                continue;
            }
            let jac = &grp.jac;
            for (pc, &col) in grp.cols.iter().enumerate() {
                let mut acc = 0.0;
                for a in 0..r {
                    acc += jac[a * p + pc] * ga[a];
                }
                grad[col] += acc;
            }
            // T = H_r * J  (r x p)
            let mut tm = vec![0.0; r * p];
            for a in 0..r {
                for b in 0..r {
                    let hv = ha[a * r + b];
                    if hv != 0.0 {
                        for pc in 0..p {
                            tm[a * p + pc] += hv * jac[b * p + pc];
                        }
                    }
                }
            }
            for (pi, &ci) in grp.cols.iter().enumerate() {
                for (pj, &cj) in grp.cols.iter().enumerate().skip(pi) {
                    let mut acc = 0.0;
                    for a in 0..r {
                        acc += jac[a * p + pi] * tm[a * p + pj];
                    }
                    if acc != 0.0 {
                        hess[ci * dim + cj] += acc;
                        if ci != cj {
                            hess[cj * dim + ci] += acc;
                        }
                    }
                }
            }
            if let Some(si) = self.aux {
                let xa = &xacc[gi];
                for (pc, &col) in grp.cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for a in 0..r {
                        acc += jac[a * p + pc] * xa[a];
                    }
                    hess[col * dim + si] += acc;
                    hess[si * dim + col] += acc;
                }
            }
        }
        if let Some(si) = self.aux {
            grad[si] += gs;
            hess[si * dim + si] += ss;
        }
        Some((grad, hess))
    }

    fn num_barrier_terms(&self) -> usize {
        self.c.constraints.len() + usize::from(self.aux.is_some())
    }
}

// ---------------------------------------------------------------------------
// Newton centering
// ---------------------------------------------------------------------------

struct Eq<'a> {
    rows: &'a [SparseRow],
}

impl Eq<'_> {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(x) - r.rhs).collect()
    }
}

enum CenterOutcome {
    Converged,
    Stalled,
    Budget,
}

/// Solves the Newton KKT system, regularizing the Hessian if it is singular.
fn newton_step(hess: &[f64], grad: &[f64], eq: &Eq, eq_res: &[f64], dim: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let me = eq.rows.len();
    let size = dim + me;
    let diag_max = (0..dim).map(|i| hess[i * dim + i].abs()).fold(0.0f64, f64::max).max(1e-300);
    for attempt in 0..6 {
        let reg = if attempt == 0 { 0.0 } else { diag_max * 10f64.powi(-14 + 2 * attempt) };
        let mut k = DMatrix::<f64>::zeros(size, size);
        for i in 0..dim {
            for j in 0..dim {
                k[(i, j)] = hess[i * dim + j];
            }
            k[(i, i)] += reg;
        }
        for (r, row) in eq.rows.iter().enumerate() {
            for &(j, c) in &row.coefs {
                k[(dim + r, j)] += c;
                k[(j, dim + r)] += c;
            }
        }
        let mut rhs = DVector::<f64>::zeros(size);
        for i in 0..dim {
            rhs[i] = -grad[i];
        }
        for r in 0..me {
            rhs[dim + r] = -eq_res[r];
        }
        let lu = k.lu();
        if let Some(sol) = lu.solve(&rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                let dx = sol.rows(0, dim).iter().copied().collect();
                let w = sol.rows(dim, me).iter().copied().collect();
                return Some((dx, w));
            }
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn center(
    phase: &Phase,
    eq: &Eq,
    x: &mut Vec<f64>,
    t: f64,
    ws: &mut Workspace,
    iterations: &mut usize,
    max_iterations: usize,
    early_exit: &dyn Fn(&[f64]) -> bool,
) -> CenterOutcome {
    let dim = phase.dim;
    loop {
        if early_exit(x) {
            return CenterOutcome::Converged;
        }
        if *iterations >= max_iterations {
            return CenterOutcome::Budget;
        }
        let Some((grad, hess)) = phase.derivatives(x, t, ws) else {
            return CenterOutcome::Stalled;
        };
        let eq_res = eq.residual(x);
        let Some((dx, _w)) = newton_step(&hess, &grad, eq, &eq_res, dim) else {
            return CenterOutcome::Stalled;
        };
        *iterations += 1;
        let slope: f64 = grad.iter().zip(&dx).map(|(g, d)| g * d).sum();
        let decrement = -slope;
        let eq_norm = eq_res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if decrement.abs() * 0.5 <= 1e-10 && eq_norm <= 1e-9 {
            return CenterOutcome::Converged;
        }
        let Some(f0) = phase.merit(x, t, ws) else {
            return CenterOutcome::Stalled;
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
            if let Some(f1) = phase.merit(&trial, t, ws) {
                let ok = if eq_norm > 1e-9 {
                    // Infeasible-start: accept any domain-feasible full step first.
                    f1.is_finite()
                } else {
                    f1 <= f0 + 0.01 * step * slope
                };
                if ok {
                    *x = trial;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return CenterOutcome::Stalled;
        }
        if step < 1e-12 {
            return CenterOutcome::Stalled;
        }
    }
}

// ---------------------------------------------------------------------------
// Public driver
// ---------------------------------------------------------------------------

impl ConvexProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            ..Default::default()
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> Option<f64> {
        let c = compile(self);
        let mut ws = Workspace { row_vals: Vec::new() };
        c.row_values(x, &mut ws);
        c.objective_value(&ws)
    }

    /// Largest scaled violation over inequalities and equalities; `None`
    /// when a constraint is evaluated outside its domain.
    pub fn max_violation(&self, x: &[f64]) -> Option<f64> {
        let c = compile(self);
        let mut ws = Workspace { row_vals: Vec::new() };
        max_violation(&c, &self.equalities, x, &mut ws)
    }

    fn check(&self) -> Result<(), SolverError> {
        let n = self.num_vars;
        let bad_aff = |a: &Affine| a.max_index().is_some_and(|i| i >= n) || !a.is_finite();
        let mut affs: Vec<&Affine> = Vec::new();
        for t in &self.objective {
            match t {
                ObjectiveTerm::Linear(a) => affs.push(a),
                ObjectiveTerm::CubicNorm { coef, arg } => {
                    if *coef < 0.0 {
                        return Err(SolverError::Malformed("negative cubic coefficient".into()));
                    }
                    affs.extend(arg.iter());
                }
                ObjectiveTerm::Reciprocal { coef, arg } => {
                    if *coef < 0.0 {
                        return Err(SolverError::Malformed("negative reciprocal coefficient".into()));
                    }
                    affs.push(arg);
                }
                ObjectiveTerm::QuadOverLin { coef, num, den } => {
                    if *coef < 0.0 {
                        return Err(SolverError::Malformed("negative quad-over-lin coefficient".into()));
                    }
                    affs.extend(num.iter());
                    affs.push(den);
                }
            }
        }
        for c in &self.inequalities {
            match c {
                Constraint::Affine(a) => affs.push(a),
                Constraint::Quadratic { squares, linear } => {
                    for (w, args) in squares {
                        if *w < 0.0 {
                            return Err(SolverError::Malformed("negative square weight".into()));
                        }
                        affs.extend(args.iter());
                    }
                    affs.push(linear);
                }
                Constraint::BitOverRate { terms, budget } => {
                    for (bits, rate) in terms {
                        if *bits < 0.0 || rate.curvature < 0.0 {
                            return Err(SolverError::Malformed(
                                "bit-over-rate row needs bits >= 0 and curvature >= 0".into(),
                            ));
                        }
                        affs.push(&rate.base);
                        affs.extend(rate.offset.iter());
                    }
                    affs.push(budget);
                }
                Constraint::Atoms { terms, bound } => {
                    for t in terms {
                        let (kind, args) = atom(t);
                        let negative = match kind {
                            Kind::Cubic { coef } | Kind::Reciprocal { coef } | Kind::QuadOverLin { coef } => coef < 0.0,
                            _ => false,
                        };
                        if negative {
                            return Err(SolverError::Malformed("negative atom coefficient".into()));
                        }
                        affs.extend(args);
                    }
                    affs.push(bound);
                }
            }
        }
        if affs.into_iter().any(bad_aff) {
            return Err(SolverError::Malformed("affine expression out of range or non-finite".into()));
        }
        for row in &self.equalities {
            if row.max_index().is_some_and(|i| i >= n) {
                return Err(SolverError::Malformed("equality row out of range".into()));
            }
        }
        Ok(())
    }
}

fn max_violation(c: &Compiled, eqs: &[SparseRow], x: &[f64], ws: &mut Workspace) -> Option<f64> {
    c.row_values(x, ws);
    let mut worst: f64 = 0.0;
    for term in &c.constraints {
        let y = c.inputs(term, ws);
        let g = local(term, &y, false)?.0;
        worst = worst.max(g / magnitude(term, &y));
    }
    for row in eqs {
        let scale = 1.0 + row.rhs.abs() + row.coefs.iter().map(|&(i, a)| (a * x[i]).abs()).sum::<f64>();
        worst = worst.max((row.dot(x) - row.rhs).abs() / scale);
    }
    Some(worst)
}

/// Minimizes the problem from a feasible `start`.
///
/// The returned point is never worse than `start`. `status == Optimal`
/// certifies a duality-gap bound below `tol_gap` (relative) and a scaled
/// stationarity residual below `tol_kkt`.
pub fn solve_convex(
    problem: &ConvexProblem,
    start: &[f64],
    settings: &ConvexSettings,
) -> Result<ConvexSolution, SolverError> {
    problem.check()?;
    let n = problem.num_vars;
    if start.len() != n {
        return Err(SolverError::Malformed(format!(
            "start has {} entries, problem has {n} variables",
            start.len()
        )));
    }
    let c = compile(problem);
    let mut ws = Workspace { row_vals: Vec::new() };

    c.row_values(start, &mut ws);
    let f_start = c.objective_value(&ws).ok_or(SolverError::DomainViolation)?;
    let g_start = c.constraint_values(&ws).ok_or(SolverError::DomainViolation)?;
    let violation = max_violation(&c, &problem.equalities, start, &mut ws).ok_or(SolverError::DomainViolation)?;
    if violation > settings.tol_feas {
        return Err(SolverError::InfeasibleStart { violation });
    }

    c.row_values(start, &mut ws);
    let scale: Vec<f64> = c
        .constraints
        .iter()
        .map(|t| 1.0 / magnitude(t, &c.inputs(t, &ws)))
        .collect();

    let keep_start = |status: Status, newton: usize, phase1: usize| ConvexSolution {
        x: start.to_vec(),
        objective: f_start,
        status,
        stationarity: f64::NAN,
        max_violation: violation.max(0.0),
        newton_iterations: newton,
        phase1_iterations: phase1,
        improved: false,
    };

    let eq = Eq {
        rows: &problem.equalities,
    };
    let mut iterations = 0usize;
    let mut x = start.to_vec();

    // Phase I when some inequality is not strictly satisfied.
    let strict = g_start.iter().zip(&scale).all(|(g, s)| g * s < -1e-10);
    let mut phase1_iterations = 0;
    if !strict && !c.constraints.is_empty() {
        let worst = g_start
            .iter()
            .zip(&scale)
            .map(|(g, s)| g * s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut xa = x.clone();
        xa.push(worst + 1e-3);
        let phase = Phase {
            c: &c,
            scale: &scale,
            aux: Some(n),
            aux_floor: -1.0,
            dim: n + 1,
        };
        let target = -1e-3;
        let mut t = 1.0;
        let m = phase.num_barrier_terms() as f64;
        let mut found = false;
        loop {
            let outcome = center(
                &phase,
                &eq,
                &mut xa,
                t,
                &mut ws,
                &mut iterations,
                settings.max_iterations,
                &|v: &[f64]| v[n] < target,
            );
            if xa[n] < target {
                found = true;
                break;
            }
            if matches!(outcome, CenterOutcome::Budget) {
                break;
            }
            if m / t < 1e-11 {
                found = xa[n] < -1e-10;
                break;
            }
            t *= settings.mu;
        }
        phase1_iterations = iterations;
        if !found {
            return Ok(keep_start(Status::Infeasible, iterations, phase1_iterations));
        }
        xa.truncate(n);
        x = xa;
        c.row_values(&x, &mut ws);
        if c.objective_value(&ws).is_none() {
            return Err(SolverError::DomainViolation);
        }
    }

    // Phase II.
    let phase = Phase {
        c: &c,
        scale: &scale,
        aux: None,
        aux_floor: 0.0,
        dim: n,
    };
    let m = phase.num_barrier_terms() as f64;
    c.row_values(&x, &mut ws);
    let f0 = c.objective_value(&ws).unwrap();
    let mut t = if m > 0.0 { m / f0.abs().max(1e-8) } else { 1.0 };
    let mut status = Status::IterationLimit;
    loop {
        let outcome = center(
            &phase,
            &eq,
            &mut x,
            t,
            &mut ws,
            &mut iterations,
            settings.max_iterations,
            &|_| false,
        );
        c.row_values(&x, &mut ws);
        let f = c.objective_value(&ws).unwrap_or(f64::INFINITY);
        if matches!(outcome, CenterOutcome::Budget) {
            break;
        }
        if m == 0.0 || m / t <= settings.tol_gap * f.abs().max(1.0) {
            status = Status::Optimal;
            break;
        }
        if matches!(outcome, CenterOutcome::Stalled) && m / t <= 1e-6 * f.abs().max(1.0) {
            // Numerically as good as it gets.
            status = Status::Optimal;
            break;
        }
        t *= settings.mu;
    }

    let stationarity = stationarity(&phase, &problem.equalities, &x, t, &mut ws);
    if status == Status::Optimal && stationarity > settings.tol_kkt {
        status = Status::IterationLimit;
    }
    c.row_values(&x, &mut ws);
    let objective = c.objective_value(&ws).unwrap_or(f64::INFINITY);
    let viol = max_violation(&c, &problem.equalities, &x, &mut ws).unwrap_or(f64::INFINITY);
    if objective.is_nan() || objective > f_start || viol > settings.tol_feas {
        let mut kept = keep_start(status, iterations, phase1_iterations);
        kept.stationarity = stationarity;
        return Ok(kept);
    }
    Ok(ConvexSolution {
        x,
        objective,
        status,
        stationarity,
        max_violation: viol,
        newton_iterations: iterations,
        phase1_iterations,
        improved: objective < f_start,
    })
}

/// Scaled residual `||grad f + sum lambda_i grad g_i + A^T nu||_inf`.
///
/// The multipliers are the Newton-corrected barrier estimates
/// `lambda_i = (1 + grad g_i . dx / sigma_i) / (t sigma_i)`, clamped at zero,
/// and `nu` is the least-squares equality multiplier.
fn stationarity(phase: &Phase, eqs: &[SparseRow], x: &[f64], t: f64, ws: &mut Workspace) -> f64 {
    let c = phase.c;
    let n = x.len();
    let Some((grad, hess)) = phase.derivatives(x, t, ws) else {
        return f64::INFINITY;
    };
    let eq = Eq { rows: eqs };
    let eq_res = eq.residual(x);
    let dx = newton_step(&hess, &grad, &eq, &eq_res, n)
        .map(|s| s.0)
        .unwrap_or_else(|| vec![0.0; n]);
    c.row_values(x, ws);
    let Some(gobj) = c.objective_gradient(x, ws) else {
        return f64::INFINITY;
    };
    let mut r = gobj.clone();
    for term in &c.constraints {
        let y = c.inputs(term, ws);
        let Some((gv, gy, _)) = local(term, &y, true) else {
            return f64::INFINITY;
        };
        let sigma = -gv;
        if sigma <= 0.0 {
            continue;
        }
        let gx = c.map_gradient(term, &gy);
        let along: f64 = gx.iter().map(|&(col, v)| v * dx[col]).sum();
        let lambda = ((1.0 + along / sigma) / (t * sigma)).max(0.0);
        for (col, v) in gx {
            r[col] += lambda * v;
        }
    }
    let me = eqs.len();
    if me > 0 {
        let mut a = DMatrix::<f64>::zeros(me, n);
        for (i, row) in eqs.iter().enumerate() {
            for &(j, cf) in &row.coefs {
                a[(i, j)] += cf;
            }
        }
        let rv = DVector::from_vec(r.clone());
        let aat = &a * a.transpose();
        if let Some(nu) = aat.lu().solve(&(-(&a * &rv))) {
            let corr = a.transpose() * nu;
            for i in 0..n {
                r[i] += corr[i];
            }
        }
    }
    let scale = 1.0 + gobj.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale
}

impl Compiled {
    /// Maps a term's input-space gradient to a sparse x-space gradient.
    fn map_gradient(&self, term: &Term, gy: &[f64]) -> Vec<(usize, f64)> {
        let grp = &self.groups[term.group];
        let p = grp.cols.len();
        grp.cols
            .iter()
            .enumerate()
            .map(|(pc, &col)| {
                let v = term
                    .sel
                    .iter()
                    .zip(gy)
                    .map(|(&s, &g)| grp.jac[s * p + pc] * g)
                    .sum();
                (col, v)
            })
            .collect()
    }

    /// Objective gradient; expects `row_values` to be current.
    fn objective_gradient(&self, x: &[f64], ws: &Workspace) -> Option<Vec<f64>> {
        let mut grad = vec![0.0; x.len()];
        for term in &self.objective {
            let y = self.inputs(term, ws);
            let (_, g, _) = local(term, &y, true)?;
            for (col, v) in self.map_gradient(term, &g) {
                grad[col] += v;
            }
        }
        Some(grad)
    }
}
