//! Trajectory stage: successive convex approximation with per-frame
//! Dinkelbach parameters.
//!
//! Decision vector `x = [v0 (2), a_0 .. a_{N-1} (2N), omega_0 .. omega_{N-1} (N)]`.
//! Positions and velocities are affine in `x` through the kinematic
//! recursion, so the endpoint condition is two linear equalities and every
//! waypoint is a sparse affine map. Positions enter the rate rows in km and
//! rates in Mbit/s.
//!
//! Around an expansion trajectory the latency rows use tangent lower bounds
//! of the private rates, and `omega_n` is a speed slack bounded by the
//! tangent plane of `||v_n||^2`. For fixed parameters `alpha_n` the surrogate
//! `sum_n alpha_n^2 E_n(v, a, omega)` is convex; the inner loop alternates
//! its minimization with the closed-form update `alpha_n = sqrt(B_n) / E_n`.

use serde::Serialize;
use sagin_solver::{solve_convex, Affine, ConcaveRate, Constraint, ConvexProblem, ObjectiveTerm, SparseRow};

use super::bounds::{surrogate_energy, Link, RateCurve};
use super::{AllocationPlan, OptimizerError, OptimizerSettings};
use crate::energy::{energy_efficiency, frame_feasible, MIN_SPEED_MPS};
use crate::geometry::{dist2, kinematic_residuals, norm, UavTrajectory, Vec2};
use crate::model::SystemModel;
use crate::par::map_slice;

const KM: f64 = 1e3;
const MBIT: f64 = 1e6;

/// Index bookkeeping for the decision vector.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub frames: usize,
    pub delta: f64,
    pub q0: Vec2,
}

impl Layout {
    pub fn num_vars(&self) -> usize {
        3 * self.frames + 2
    }

    pub fn idx_v0(&self, d: usize) -> usize {
        d
    }

    pub fn idx_a(&self, n: usize, d: usize) -> usize {
        2 + 2 * n + d
    }

    pub fn idx_omega(&self, n: usize) -> usize {
        2 + 2 * self.frames + n
    }

    /// `v_n[d]` for `n = 0..=N`.
    pub fn velocity(&self, n: usize, d: usize) -> Affine {
        let mut coefs = vec![(self.idx_v0(d), 1.0)];
        coefs.extend((0..n).map(|j| (self.idx_a(j, d), self.delta)));
        Affine { coefs, constant: 0.0 }
    }

    pub fn acceleration(&self, n: usize, d: usize) -> Affine {
        Affine::var(self.idx_a(n, d))
    }

    /// `q_n[d]` in km for `n = 0..=N`.
    pub fn position_km(&self, n: usize, d: usize) -> Affine {
        let dd = self.delta * self.delta;
        let mut coefs = vec![(self.idx_v0(d), n as f64 * self.delta / KM)];
        coefs.extend((0..n).map(|j| (self.idx_a(j, d), dd * ((n - 1 - j) as f64 + 0.5) / KM)));
        Affine {
            coefs,
            constant: self.q0[d] / KM,
        }
    }

    pub fn encode(&self, t: &UavTrajectory, omega: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.num_vars()];
        x[0] = t.v[0][0];
        x[1] = t.v[0][1];
        for n in 0..self.frames {
            x[self.idx_a(n, 0)] = t.a[n][0];
            x[self.idx_a(n, 1)] = t.a[n][1];
            x[self.idx_omega(n)] = omega[n];
        }
        x
    }

    pub fn decode(&self, x: &[f64]) -> UavTrajectory {
        let a: Vec<Vec2> = (0..self.frames)
            .map(|n| [x[self.idx_a(n, 0)], x[self.idx_a(n, 1)]])
            .collect();
        UavTrajectory::from_accelerations(self.q0, [x[0], x[1]], &a, self.delta)
    }

    pub fn omega(&self, x: &[f64]) -> Vec<f64> {
        (0..self.frames).map(|n| x[self.idx_omega(n)]).collect()
    }
}

/// Record of one SCA run from a single start trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScaChain {
    /// Waypoints of every expansion trajectory, in visiting order.
    pub expansions: Vec<Vec<Vec2>>,
    /// Per-frame `alpha` at the exit of every accepted SCA iteration.
    pub alpha_exits: Vec<Vec<f64>>,
    /// Dinkelbach residual of the first inner step of every SCA iteration,
    /// evaluated with the warm-started `alpha`.
    pub warm_start_residuals: Vec<f64>,
    /// Residual and threshold at every inner exit.
    pub inner_exits: Vec<(f64, f64)>,
    pub sca_iterations: usize,
    pub dinkelbach_iterations: usize,
    pub newton_iterations: usize,
    /// True objective at the start and at the end of the chain.
    pub objective_start: f64,
    pub objective_end: f64,
}

/// Everything recorded by one trajectory stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScaAudit {
    /// Offloading decisions the stage ran with.
    pub z: Vec<Vec<f64>>,
    /// The chain from the incumbent first, then any detour chains.
    pub chains: Vec<ScaChain>,
    /// Index of the chain whose result was kept.
    pub chosen: usize,
    pub sca_iterations: usize,
    pub dinkelbach_iterations: usize,
    pub newton_iterations: usize,
    /// True objective before and after the stage.
    pub objective_in: f64,
    pub objective_out: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub trajectory: UavTrajectory,
    pub audit: ScaAudit,
}

fn frame_bits(plan: &AllocationPlan, frames: usize) -> Vec<f64> {
    (0..frames).map(|n| plan.load.frame_bits(n)).collect()
}

/// Surrogate power of every frame at `x`.
fn surrogate_powers(x: &[f64], lay: &Layout, m: &SystemModel) -> Vec<f64> {
    let t = lay.decode(x);
    let om = lay.omega(x);
    (0..lay.frames)
        .map(|n| surrogate_energy(t.v[n], t.a[n], om[n], &m.config))
        .collect()
}

/// Constraints of the convexified problem around `expansion`.
fn constraints(lay: &Layout, expansion: &UavTrajectory, plan: &AllocationPlan, m: &SystemModel) -> ConvexProblem {
    let c = &m.config;
    let nn = lay.frames;
    let mut p = ConvexProblem::new(lay.num_vars());

    for d in 0..2 {
        let q = lay.position_km(nn, d);
        p.equalities.push(SparseRow::new(q.coefs.clone(), c.uav_end_m[d] / KM - q.constant));
    }

    let vmax2 = c.v_max_mps * c.v_max_mps;
    for n in 0..=nn {
        p.inequalities.push(Constraint::Quadratic {
            squares: vec![(1.0 / vmax2, vec![lay.velocity(n, 0), lay.velocity(n, 1)])],
            linear: Affine::constant(-1.0),
        });
    }
    let amax2 = c.a_max_mps2 * c.a_max_mps2;
    for n in 0..nn {
        p.inequalities.push(Constraint::Quadratic {
            squares: vec![(1.0 / amax2, vec![lay.acceleration(n, 0), lay.acceleration(n, 1)])],
            linear: Affine::constant(-1.0),
        });
    }

    // omega_n^2 <= ||v^_n||^2 + 2 v^_n . (v_n - v^_n), scaled by ||v^_n||^2.
    for n in 0..nn {
        let ve = expansion.v[n];
        let e2 = (ve[0] * ve[0] + ve[1] * ve[1]).max(MIN_SPEED_MPS * MIN_SPEED_MPS);
        let lb = lay
            .velocity(n, 0)
            .scale(2.0 * ve[0])
            .axpy(2.0 * ve[1], &lay.velocity(n, 1))
            .add_constant(-(ve[0] * ve[0] + ve[1] * ve[1]));
        p.inequalities.push(Constraint::Quadratic {
            squares: vec![(1.0 / e2, vec![Affine::var(lay.idx_omega(n))])],
            linear: lb.scale(-1.0 / e2),
        });
        p.inequalities.push(Constraint::Affine(
            Affine::var(lay.idx_omega(n)).scale(-1.0).add_constant(MIN_SPEED_MPS),
        ));
    }

    let h2 = c.uav_altitude_m * c.uav_altitude_m;
    for n in 0..nn {
        let q_exp = expansion.q[n];
        let exec_shared = plan.load.shared_cycles(n, &m.cache.hits, c) / (c.cpu_fraction_shared * c.leo_cpu_hz);
        for k in 0..m.num_devices() {
            let z = plan.z[k][n];
            let bits_in = plan.load.private_in[k][n];
            // LEO-only entries do not depend on the trajectory.
            if z >= 1.0 || bits_in <= 0.0 {
                continue;
            }
            let dev = m.geometry.devices[k];
            let cpu = c.devices[k].cpu_fraction * (z * c.leo_cpu_hz + (1.0 - z) * c.uav_cpu_hz);
            let budget = c.frame_s
                - plan.load.t_ul[n]
                - plan.load.t_dl[n]
                - exec_shared
                - plan.load.private_cycles(k, n, c) / cpu;
            let d0 = dist2(q_exp, dev);
            let u0 = d0 + h2;
            let offset: Vec<Affine> = (0..2).map(|d| lay.position_km(n, d).add_constant(-dev[d] / KM)).collect();
            let rate = |link: Link| {
                let curve = RateCurve::new(link, k, n, z, m);
                let slope = -curve.slope(u0);
                ConcaveRate {
                    base: Affine::constant((curve.rate(u0) + slope * d0) / MBIT),
                    curvature: slope,
                    offset: offset.clone(),
                }
            };
            p.inequalities.push(Constraint::BitOverRate {
                terms: vec![
                    (bits_in / MBIT, rate(Link::Uplink)),
                    (plan.load.private_out[k][n] / MBIT, rate(Link::Downlink)),
                ],
                budget: Affine::constant(budget),
            });
        }
    }
    p
}

/// Atoms of `w * E_n(v_n, a_n, omega_n)`.
fn power_atoms(lay: &Layout, n: usize, w: f64, m: &SystemModel) -> [ObjectiveTerm; 3] {
    let c = &m.config;
    let om = Affine::var(lay.idx_omega(n));
    [
        ObjectiveTerm::CubicNorm {
            coef: w * c.lambda1,
            arg: vec![lay.velocity(n, 0), lay.velocity(n, 1)],
        },
        ObjectiveTerm::Reciprocal {
            coef: w * c.lambda2,
            arg: om.clone(),
        },
        ObjectiveTerm::QuadOverLin {
            coef: w * c.lambda2 / (c.gravity_mps2 * c.gravity_mps2),
            num: vec![lay.acceleration(n, 0), lay.acceleration(n, 1)],
            den: om,
        },
    ]
}

/// Objective `sum_n w_n E_n(v_n, a_n, omega_n)`.
fn objective(lay: &Layout, weights: &[f64], m: &SystemModel) -> Vec<ObjectiveTerm> {
    weights
        .iter()
        .enumerate()
        .flat_map(|(n, &w)| power_atoms(lay, n, w, m))
        .collect()
}

/// `E_n(v_n, a_n, omega_n) <= cap_n`, scaled by the cap.
fn energy_caps(lay: &Layout, caps: &[f64], m: &SystemModel) -> Vec<Constraint> {
    caps.iter()
        .enumerate()
        .map(|(n, &cap)| Constraint::Atoms {
            terms: power_atoms(lay, n, 1.0 / cap, m).to_vec(),
            bound: Affine::constant(1.0),
        })
        .collect()
}

/// Per-frame objective weights `alpha_n^2`, normalized; uniform when every
/// frame carries zero bits.
fn weights(alpha: &[f64]) -> Vec<f64> {
    let top = alpha.iter().map(|a| a * a).fold(0.0, f64::max);
    if top <= 0.0 {
        return vec![1.0; alpha.len()];
    }
    alpha.iter().map(|a| (a * a / top).max(1e-12)).collect()
}

fn alphas(bits: &[f64], powers: &[f64]) -> Vec<f64> {
    bits.iter().zip(powers).map(|(b, e)| b.sqrt() / e).collect()
}

/// True objective and latency/kinematic feasibility of a candidate.
fn true_objective(t: &UavTrajectory, plan: &AllocationPlan, m: &SystemModel, tol: f64) -> Option<f64> {
    if !kinematic_residuals(t, &m.config).feasible {
        return None;
    }
    for n in 0..m.num_frames() {
        if !frame_feasible(n, &plan.z_column(n), t.q[n], &plan.load, m).feasible(tol) {
            return None;
        }
    }
    energy_efficiency(t, &plan.load, &m.config).ok()
}

/// The incumbent bent sideways by a half-sine of the given amplitude,
/// rebuilt through the kinematics so the endpoint is kept.
pub fn lateral_detour(t: &UavTrajectory, amplitude_m: f64, delta: f64, end: Vec2) -> UavTrajectory {
    let nn = t.num_frames();
    let chord = [t.q[nn][0] - t.q[0][0], t.q[nn][1] - t.q[0][1]];
    let len = norm(chord).max(f64::MIN_POSITIVE);
    let perp = [-chord[1] / len, chord[0] / len];
    let total = nn as f64 * delta;
    let w = std::f64::consts::PI / total;
    // y(t) = A sin(w t): initial lateral speed A w, acceleration -A w^2 sin(w t).
    let mut v0 = [t.v[0][0] + perp[0] * amplitude_m * w, t.v[0][1] + perp[1] * amplitude_m * w];
    let a: Vec<Vec2> = (0..nn)
        .map(|n| {
            let s = -amplitude_m * w * w * (w * (n as f64 + 0.5) * delta).sin();
            [t.a[n][0] + perp[0] * s, t.a[n][1] + perp[1] * s]
        })
        .collect();
    let rolled = UavTrajectory::from_accelerations(t.q[0], v0, &a, delta);
    // q_N is affine in v0 with slope N * delta.
    for d in 0..2 {
        v0[d] += (end[d] - rolled.q[nn][d]) / total;
    }
    UavTrajectory::from_accelerations(t.q[0], v0, &a, delta)
}

struct ChainContext<'a> {
    plan: &'a AllocationPlan,
    m: &'a SystemModel,
    s: &'a OptimizerSettings,
    lay: Layout,
    bits: Vec<f64>,
}

/// SCA with inner Dinkelbach loops from `start`; every accepted step raises
/// the true objective.
fn sca_chain(ctx: &ChainContext, start: UavTrajectory) -> Result<(UavTrajectory, ScaChain), OptimizerError> {
    let ChainContext { plan, m, s, lay, bits } = ctx;
    let (plan, m, s, lay) = (*plan, *m, *s, *lay);
    let c = &m.config;
    let nn = lay.frames;
    let mut chain = ScaChain::default();
    let mut current = start;
    let mut current_obj = energy_efficiency(&current, &plan.load, c)?;
    chain.objective_start = current_obj;

    // The first loop starts from the start trajectory's own ratios.
    let start_powers: Vec<f64> = (0..nn)
        .map(|n| surrogate_energy(current.v[n], current.a[n], norm(current.v[n]), c))
        .collect();
    let mut alpha = alphas(bits, &start_powers);
    // Surrogate power at the previous SCA exit.
    let mut caps: Option<Vec<f64>> = None;

    for _ in 0..s.max_sca {
        chain.sca_iterations += 1;
        chain.expansions.push(current.q.clone());
        let omega: Vec<f64> = current.v[..nn].iter().map(|&v| norm(v).max(MIN_SPEED_MPS * 1.01)).collect();
        let x_start = lay.encode(&current, &omega);
        let mut problem = constraints(&lay, &current, plan, m);
        if let (true, Some(caps)) = (s.frame_energy_cap, &caps) {
            problem.inequalities.extend(energy_caps(&lay, caps, m));
        }

        let mut x = x_start.clone();
        let mut first = true;
        for _ in 0..s.max_dinkelbach {
            chain.dinkelbach_iterations += 1;
            problem.objective = objective(&lay, &weights(&alpha), m);
            let sol = match solve_convex(&problem, &x, &s.convex) {
                Ok(sol) => sol,
                Err(e) if first => return Err(OptimizerError::Trajectory(e.to_string())),
                Err(_) => break,
            };
            chain.newton_iterations += sol.newton_iterations;
            let before = surrogate_powers(&x, &lay, m);
            let after = surrogate_powers(&sol.x, &lay, m);
            let residual: f64 = alpha
                .iter()
                .zip(before.iter().zip(&after))
                .map(|(a, (e0, e1))| a * a * (e0 - e1))
                .sum();
            let scale: f64 = bits.iter().zip(&after).map(|(b, e)| b / e).sum();
            let threshold = s.dinkelbach_rel_tol * scale.max(f64::MIN_POSITIVE);
            if first {
                chain.warm_start_residuals.push(residual);
                first = false;
            }
            x = sol.x;
            let next = alphas(bits, &after);
            if residual <= threshold {
                chain.inner_exits.push((residual, threshold));
                break;
            }
            alpha = next;
        }

        // Accept the full step or the first improving fraction of it.
        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..=s.max_step_halvings {
            let trial: Vec<f64> = x_start.iter().zip(&x).map(|(a, b)| a + step * (b - a)).collect();
            let t = lay.decode(&trial);
            if let Some(obj) = true_objective(&t, plan, m, s.feas_tol) {
                if obj >= current_obj {
                    accepted = Some((trial, t, obj));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_acc, next, obj)) = accepted else {
            break;
        };
        let exit_powers = surrogate_powers(&x_acc, &lay, m);
        alpha = alphas(bits, &exit_powers);
        chain.alpha_exits.push(alpha.clone());
        caps = Some(exit_powers);
        let moved = next
            .q
            .iter()
            .zip(&current.q)
            .map(|(a, b)| dist2(*a, *b).sqrt())
            .fold(0.0, f64::max);
        current = next;
        current_obj = obj;
        if moved < s.sca_tol_m {
            break;
        }
    }
    chain.objective_end = current_obj;
    Ok((current, chain))
}

/// Moves the trajectory to raise the objective with bits and offloading
/// fixed. The returned trajectory is never worse than the incumbent.
///
/// A straight incumbent is a stationary point of the surrogate for every
/// sideways perturbation, so with `detour_fraction > 0` the stage also runs
/// SCA from the incumbent bent to either side and keeps the best result.
pub fn optimize_trajectory(
    plan: &AllocationPlan,
    m: &SystemModel,
    s: &OptimizerSettings,
) -> Result<TrajectoryResult, OptimizerError> {
    optimize_trajectory_scored(plan, m, s, |_, objective| Some(objective))
}

/// Like [`optimize_trajectory`], but among the chain results that do not
/// lose objective it keeps the one `score(trajectory, objective)` rates
/// highest. Results the score rejects with `None` are passed over unless
/// nothing else qualifies.
pub fn optimize_trajectory_scored<F>(
    plan: &AllocationPlan,
    m: &SystemModel,
    s: &OptimizerSettings,
    score: F,
) -> Result<TrajectoryResult, OptimizerError>
where
    F: Fn(&UavTrajectory, f64) -> Option<f64> + Sync,
{
    let c = &m.config;
    let nn = m.num_frames();
    let ctx = ChainContext {
        plan,
        m,
        s,
        lay: Layout {
            frames: nn,
            delta: c.frame_s,
            q0: c.uav_start_m,
        },
        bits: frame_bits(plan, nn),
    };
    let incumbent = plan.trajectory.clone();
    let objective_in = energy_efficiency(&incumbent, &plan.load, c)?;

    let mut starts = vec![incumbent.clone()];
    if s.detour_fraction > 0.0 {
        let chord = norm([c.uav_end_m[0] - c.uav_start_m[0], c.uav_end_m[1] - c.uav_start_m[1]]);
        for sign in [1.0, -1.0] {
            let t = lateral_detour(&incumbent, sign * s.detour_fraction * chord, c.frame_s, c.uav_end_m);
            if true_objective(&t, plan, m, s.feas_tol).is_some() {
                starts.push(t);
            }
        }
    }
    let runs = map_slice(s.parallelism, &starts, |t| {
        let (t, chain) = sca_chain(&ctx, t.clone())?;
        let rating = if chain.objective_end >= objective_in {
            score(&t, chain.objective_end)
        } else {
            None
        };
        Ok((t, chain, rating))
    });

    let mut audit = ScaAudit {
        z: plan.z.clone(),
        objective_in,
        objective_out: objective_in,
        ..Default::default()
    };
    let mut best = incumbent;
    let mut best_rating = None;
    for (i, run) in runs.into_iter().enumerate() {
        let (t, chain, rating) = match run {
            Ok(r) => r,
            Err(e) if i == 0 => return Err(e),
            // A detour start the solver rejects is simply dropped.
            Err(_) => continue,
        };
        audit.sca_iterations += chain.sca_iterations;
        audit.dinkelbach_iterations += chain.dinkelbach_iterations;
        audit.newton_iterations += chain.newton_iterations;
        // The incumbent's own chain is the fallback.
        let better = match (rating, best_rating) {
            (Some(r), Some(b)) => r > b,
            (Some(_), None) => true,
            (None, _) => i == 0,
        };
        if better {
            audit.objective_out = chain.objective_end;
            audit.chosen = audit.chains.len();
            best_rating = rating;
            best = t;
        }
        audit.chains.push(chain);
    }
    Ok(TrajectoryResult { trajectory: best, audit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::straight_line_trajectory;
    use crate::optimizer::initial_plan;
    use crate::scenario::default_scenario;

    #[test]
    fn layout_matches_roll_out() {
        let c = default_scenario();
        let lay = Layout {
            frames: 5,
            delta: 7.0,
            q0: [100.0, -300.0],
        };
        let a = vec![[0.5, -1.0], [2.0, 0.0], [-1.0, 1.5], [0.0, 0.3], [1.0, 1.0]];
        let t = UavTrajectory::from_accelerations(lay.q0, [12.0, 4.0], &a, 7.0);
        let x = lay.encode(&t, &[1.0; 5]);
        for n in 0..=5 {
            for d in 0..2 {
                assert!((lay.position_km(n, d).eval(&x) * KM - t.q[n][d]).abs() < 1e-9);
                assert!((lay.velocity(n, d).eval(&x) - t.v[n][d]).abs() < 1e-12);
            }
        }
        assert_eq!(lay.decode(&x), t);
        let _ = c;
    }

    #[test]
    fn start_point_is_feasible() {
        let m = SystemModel::from_config(default_scenario()).unwrap();
        let plan = initial_plan(&m).unwrap();
        let t = straight_line_trajectory(&m.config).unwrap();
        let lay = Layout {
            frames: 60,
            delta: 7.0,
            q0: m.config.uav_start_m,
        };
        let p = constraints(&lay, &t, &plan, &m);
        let om: Vec<f64> = t.v[..60].iter().map(|&v| norm(v)).collect();
        let x = lay.encode(&t, &om);
        assert!(p.max_violation(&x).unwrap() < 1e-9);
    }

    #[test]
    fn zero_bits_minimizes_energy() {
        let mut c = default_scenario();
        c.num_frames = 8;
        c.devices.truncate(1);
        c.min_input_bits = 0.0;
        c.uav_end_m = [0.0, 5000.0 + 8.0 * 7.0 * 16.0];
        let m = SystemModel::from_config(c).unwrap();
        let plan = initial_plan(&m).unwrap();
        let res = optimize_trajectory(&plan, &m, &OptimizerSettings::default()).unwrap();
        assert_eq!(res.audit.objective_out, 0.0);
        let e0 = crate::energy::total_energy(&plan.trajectory, &m.config).unwrap();
        let e1 = crate::energy::total_energy(&res.trajectory, &m.config).unwrap();
        assert!(e1 < e0, "{e1} vs {e0}");
    }
}
