//! Independent oracles shared by the oracle tests and the acceptance run.
//!
//! Nothing here calls the optimizer: each oracle searches the feasible set
//! directly through the model functions.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sagin_core::caching::scenario_indicators;
use sagin_core::channel::{private_downlink_rate, private_uplink_rate};
use sagin_core::energy::{energy_efficiency, frame_feasible, shared_output, shared_phase_times, FrameLoad};
use sagin_core::geometry::{kinematic_residuals, UavTrajectory, Vec2};
use sagin_core::scenario::validate;
use sagin_core::{default_scenario, AllocationPlan, ScenarioConfig, SystemModel};

pub const FEAS_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Convexity of the inverse-rate term
// ---------------------------------------------------------------------------

/// `γ / log2(1 + B (C1 - C2) x + B C2)`.
pub fn psi(x: f64, gamma: f64, b: f64, c1: f64, c2: f64) -> f64 {
    gamma / (1.0 + b * (c1 - c2) * x + b * c2).log2()
}

/// Smallest second difference of `psi` over `draws` random parameter sets,
/// each on a `points`-point grid of `[0, 1]`.
pub fn psi_min_second_difference(draws: usize, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1.0 / (points - 1) as f64;
    let mut worst = f64::INFINITY;
    for _ in 0..draws {
        let gamma = rng.random_range(0.01..10.0);
        let b = rng.random_range(0.1..100.0);
        let c1 = rng.random_range(0.01..10.0);
        let c2 = c1 + rng.random_range(0.001..10.0);
        let f = |x: f64| psi(x, gamma, b, c1, c2);
        for i in 1..points - 1 {
            let x = i as f64 * h;
            worst = worst.min(f(x - h) - 2.0 * f(x) + f(x + h));
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Bit LP by vertex enumeration
// ---------------------------------------------------------------------------

/// Maximizes `c·x` subject to `A x <= b` by solving every square subsystem
/// of active constraints and keeping the best feasible vertex.
pub fn vertex_lp_max(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = c.len();
    let m = a.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let mat = DMatrix::from_fn(n, n, |i, j| a[idx[i]][j]);
        let rhs = DVector::from_fn(n, |i, _| b[idx[i]]);
        if let Some(x) = mat.lu().solve(&rhs) {
            let scale = x.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            let feasible = (0..m).all(|r| {
                let lhs: f64 = (0..n).map(|j| a[r][j] * x[j]).sum();
                lhs <= b[r] + 1e-9 * scale.max(b[r].abs())
            });
            if feasible && x.iter().all(|v| v.is_finite()) {
                let obj: f64 = (0..n).map(|j| c[j] * x[j]).sum();
                if best.as_ref().is_none_or(|(o, _)| obj > *o) {
                    best = Some((obj, x.iter().copied().collect()));
                }
            }
        }
        // Next combination of `n` rows out of `m`.
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] != i + m - n {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Optimal delivered bits of frame `n` for the plan's trajectory and
/// offloading, from the bit LP written out row by row. Requires the
/// cache-miss-average output rule.
pub fn bits_lp_oracle(m: &SystemModel, plan: &AllocationPlan, n: usize, margin: f64) -> f64 {
    let c = &m.config;
    let kk = m.num_devices();
    let misses: Vec<usize> = m.cache.misses().collect();
    let nm = misses.len();
    let mb = 1e6;
    let bmin = c.min_input_bits / mb;
    let deadline = c.frame_s - margin;
    // Variables: shared inputs of misses, private inputs, T_ul, T_dl.
    let nv = nm + kk + 2;
    let (iu, id) = (nm + kk, nm + kk + 1);
    let out_coef = c.output_ratio_shared / nm.max(1) as f64;
    let exec = c.cycles_per_bit_shared * mb / (c.cpu_fraction_shared * c.leo_cpu_hz);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let mut push = |row: Vec<f64>, b: f64| {
        rows.push(row);
        rhs.push(b);
    };
    for (j, &k) in misses.iter().enumerate() {
        let mut r = vec![0.0; nv];
        r[j] = mb / m.rates.shared_ul[k][n];
        r[iu] = -1.0;
        push(r, 0.0);
    }
    let dl = m.rates.shared_dl_min[n] / mb;
    let mut r = vec![0.0; nv];
    if nm > 0 {
        for v in r.iter_mut().take(nm) {
            *v = out_coef / dl;
        }
        r[id] = -1.0;
        push(r, 0.0);
    } else {
        r[id] = -1.0;
        push(r, -c.output_ratio_shared * bmin / dl);
    }
    for k in 0..kk {
        let z = plan.z[k][n];
        let q = plan.trajectory.q[n];
        let ul = private_uplink_rate(k, n, z, q, &m.geometry, c) / mb;
        let dlk = private_downlink_rate(k, n, z, q, &m.geometry, c) / mb;
        let cpu = c.devices[k].cpu_fraction * (z * c.leo_cpu_hz + (1.0 - z) * c.uav_cpu_hz);
        let mut r = vec![0.0; nv];
        for v in r.iter_mut().take(nm) {
            *v = exec;
        }
        r[nm + k] = 1.0 / ul + c.cycles_per_bit_private * mb / cpu + c.output_ratio_private / dlk;
        r[iu] = 1.0;
        r[id] = 1.0;
        push(r, deadline);
    }
    for j in 0..nm + kk {
        let mut r = vec![0.0; nv];
        r[j] = -1.0;
        push(r, -bmin);
    }
    for j in [iu, id] {
        let mut r = vec![0.0; nv];
        r[j] = -1.0;
        push(r, 0.0);
    }
    let mut obj = vec![0.0; nv];
    for v in obj.iter_mut().take(nm) {
        *v = kk as f64 * out_coef;
    }
    for k in 0..kk {
        obj[nm + k] = c.output_ratio_private;
    }
    let (best, _) = vertex_lp_max(&obj, &rows, &rhs).expect("bounded feasible LP");
    let fixed_shared = if nm == 0 { kk as f64 * c.output_ratio_shared * bmin } else { 0.0 };
    (best + fixed_shared) * mb
}

// ---------------------------------------------------------------------------
// Trajectory rebuilt from waypoints
// ---------------------------------------------------------------------------

/// The trajectory through `q` (all `N + 1` waypoints) with initial
/// velocity `v0`: each frame's acceleration is the one that lands on the
/// next waypoint.
pub fn through_waypoints(q: &[Vec2], v0: Vec2, delta: f64) -> UavTrajectory {
    let mut v = v0;
    let mut a = Vec::with_capacity(q.len() - 1);
    for w in q.windows(2) {
        let an = [
            2.0 * (w[1][0] - w[0][0] - v[0] * delta) / (delta * delta),
            2.0 * (w[1][1] - w[0][1] - v[1] * delta) / (delta * delta),
        ];
        v = [v[0] + an[0] * delta, v[1] + an[1] * delta];
        a.push(an);
    }
    UavTrajectory::from_accelerations(q[0], v0, &a, delta)
}

fn kinematically_feasible(t: &UavTrajectory, c: &ScenarioConfig) -> bool {
    kinematic_residuals(t, c).feasible && t.v.iter().all(|v| v[0].hypot(v[1]) >= 0.2)
}

/// Objective of a trajectory with the plan's bits and decisions, or `None`
/// if it breaks a kinematic limit or a deadline.
pub fn trajectory_objective(t: &UavTrajectory, plan: &AllocationPlan, m: &SystemModel) -> Option<f64> {
    if !kinematically_feasible(t, &m.config) {
        return None;
    }
    for n in 0..m.num_frames() {
        if !frame_feasible(n, &plan.z_column(n), t.q[n], &plan.load, m).feasible(FEAS_TOL) {
            return None;
        }
    }
    energy_efficiency(t, &plan.load, &m.config).ok()
}

/// Best objective over intermediate waypoints and initial velocity with
/// bits and decisions fixed, for a 3-frame plan: a coarse grid followed by
/// a compass search on the exact objective.
pub fn trajectory_search_3_frames(plan: &AllocationPlan, m: &SystemModel, box_m: f64) -> f64 {
    let c = &m.config;
    assert_eq!(m.num_frames(), 3);
    let (start, end) = (c.uav_start_m, c.uav_end_m);
    let line = |f: f64| [start[0] + f * (end[0] - start[0]), start[1] + f * (end[1] - start[1])];
    let eval = |x: &[f64; 6]| {
        let q = [start, [x[0], x[1]], [x[2], x[3]], end];
        trajectory_objective(&through_waypoints(&q, [x[4], x[5]], c.frame_s), plan, m)
    };
    let (l1, l2) = (line(1.0 / 3.0), line(2.0 / 3.0));
    let vmax = c.v_max_mps;
    let steps = 7;
    let lin = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (steps - 1) as f64;
    let mut best: Option<([f64; 6], f64)> = None;
    let mut idx = [0usize; 6];
    loop {
        let x = [
            lin(l1[0] - box_m, l1[0] + box_m, idx[0]),
            lin(l1[1] - box_m, l1[1] + box_m, idx[1]),
            lin(l2[0] - box_m, l2[0] + box_m, idx[2]),
            lin(l2[1] - box_m, l2[1] + box_m, idx[3]),
            lin(-vmax, vmax, idx[4]),
            lin(-vmax, vmax, idx[5]),
        ];
        if let Some(v) = eval(&x) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((x, v));
            }
        }
        let mut d = 0;
        while d < 6 {
            idx[d] += 1;
            if idx[d] < steps {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == 6 {
            break;
        }
    }
    let (mut x, mut v) = best.expect("grid contains a feasible point");
    let mut step = [box_m / 3.0, box_m / 3.0, box_m / 3.0, box_m / 3.0, vmax / 3.0, vmax / 3.0];
    while step[0] > 1e-3 {
        let mut improved = false;
        for d in 0..6 {
            for sign in [1.0, -1.0] {
                let mut y = x;
                y[d] += sign * step[d];
                if let Some(w) = eval(&y) {
                    if w > v {
                        (x, v) = (y, w);
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            for s in &mut step {
                *s *= 0.5;
            }
        }
    }
    v
}

// ---------------------------------------------------------------------------
// Exhaustive search on tiny instances
// ---------------------------------------------------------------------------

/// Random 2-device, 3-frame scenario near a short UAV path.
pub fn tiny_instance(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut c = default_scenario();
        c.seed = seed;
        c.num_frames = 3;
        c.resize_devices(2);
        c.uav_start_m = [0.0, 5000.0];
        c.uav_end_m = [rng.random_range(300.0..600.0), 5000.0 + rng.random_range(-200.0..200.0)];
        for d in &mut c.devices {
            d.x_m = rng.random_range(-500.0..1100.0);
            d.y_m = rng.random_range(4300.0..5700.0);
        }
        c.cache_pattern = Some(vec![rng.random_range(0..2), rng.random_range(0..2)]);
        if validate(&c).is_ok() {
            return c;
        }
    }
}

/// Levels each input variable may take, as multiples of `B_min`.
pub const BIT_LEVELS: [f64; 4] = [1.0, 4.0, 16.0, 64.0];

/// Most bits frame `n` can deliver with the UAV at `q`, over the bit
/// levels and binary decisions; `None` if nothing fits.
fn best_frame_bits(n: usize, q: Vec2, m: &SystemModel) -> Option<f64> {
    let c = &m.config;
    let kk = m.num_devices();
    let misses: Vec<usize> = m.cache.misses().collect();
    let nvars = misses.len() + kk;
    let combos = BIT_LEVELS.len().pow(nvars as u32);
    let mut best: Option<f64> = None;
    let mut load = FrameLoad::zeros(kk, m.num_frames());
    for code in 0..combos {
        let mut rest = code;
        let mut level = || {
            let l = BIT_LEVELS[rest % BIT_LEVELS.len()];
            rest /= BIT_LEVELS.len();
            l * c.min_input_bits
        };
        let mut miss_inputs = Vec::new();
        for &k in &misses {
            let b = level();
            load.shared_in[k][n] = b;
            miss_inputs.push(b);
        }
        for k in 0..kk {
            let b = level();
            load.private_in[k][n] = b;
            load.private_out[k][n] = c.output_ratio_private * b;
        }
        load.shared_out[n] = shared_output(&miss_inputs, c);
        let t = shared_phase_times(n, &load, m);
        load.t_ul[n] = t.t_ul;
        load.t_dl[n] = t.t_dl;
        // Each device picks its better server independently.
        let chk0 = frame_feasible(n, &vec![0.0; kk], q, &load, m);
        let chk1 = frame_feasible(n, &vec![1.0; kk], q, &load, m);
        let fits = (0..kk).all(|k| chk0.residuals[k].max(chk1.residuals[k]) >= -FEAS_TOL);
        if fits && chk0.ul_shortfall <= FEAS_TOL && chk0.dl_shortfall <= FEAS_TOL {
            let bits = load.frame_bits(n);
            if best.is_none_or(|b| bits > b) {
                best = Some(bits);
            }
        }
    }
    best
}

/// Exhaustive optimum over 5x5 waypoint grids for the two interior
/// waypoints, a 9x9 grid of initial velocities, the bit levels and binary
/// decisions.
pub fn exhaustive_tiny_optimum(c: &ScenarioConfig) -> f64 {
    let cache = scenario_indicators(c.cache_pattern.as_ref().unwrap(), c).unwrap();
    let m = SystemModel::new(c.clone(), cache);
    let (start, end) = (c.uav_start_m, c.uav_end_m);
    let line = |f: f64| [start[0] + f * (end[0] - start[0]), start[1] + f * (end[1] - start[1])];
    let grid = |center: Vec2| -> Vec<Vec2> {
        let offs = [-150.0, -75.0, 0.0, 75.0, 150.0];
        offs.iter()
            .flat_map(|&dx| offs.iter().map(move |&dy| [center[0] + dx, center[1] + dy]))
            .collect()
    };
    let (g1, g2) = (grid(line(1.0 / 3.0)), grid(line(2.0 / 3.0)));
    let b0 = best_frame_bits(0, start, &m);
    let b1: Vec<Option<f64>> = g1.iter().map(|&q| best_frame_bits(1, q, &m)).collect();
    let b2: Vec<Option<f64>> = g2.iter().map(|&q| best_frame_bits(2, q, &m)).collect();
    let vmax = c.v_max_mps;
    let vgrid: Vec<f64> = (0..9).map(|i| -vmax + 2.0 * vmax * i as f64 / 8.0).collect();
    let mut best = 0.0f64;
    let Some(b0) = b0 else { return 0.0 };
    for (i, q1) in g1.iter().enumerate() {
        let Some(b1) = b1[i] else { continue };
        for (j, q2) in g2.iter().enumerate() {
            let Some(b2) = b2[j] else { continue };
            for &vx in &vgrid {
                for &vy in &vgrid {
                    let t = through_waypoints(&[start, *q1, *q2, end], [vx, vy], c.frame_s);
                    if !kinematically_feasible(&t, c) {
                        continue;
                    }
                    let mut load = FrameLoad::zeros(m.num_devices(), 3);
                    for (n, b) in [b0, b1, b2].into_iter().enumerate() {
                        load.shared_out[n] = b;
                    }
                    // Frame bits enter only through the per-frame totals.
                    load.shared_out.iter_mut().for_each(|v| *v /= m.num_devices() as f64);
                    if let Ok(ee) = energy_efficiency(&t, &load, c) {
                        best = best.max(ee);
                    }
                }
            }
        }
    }
    best
}
