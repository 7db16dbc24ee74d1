//! Bit and shared-phase latency allocation with trajectory and offloading
//! fixed.
//!
//! The objective is a sum of per-frame ratios with fixed denominators, and
//! no constraint couples frames, so each frame is an independent LP in
//! Mbit and seconds:
//!
//! ```text
//! max  K * out(s) + O * sum_k p_k
//! s.t. s_j / R_j           <= T_ul          (each cache-miss device j)
//!      out(s) / R_dl_min   <= T_dl
//!      p_k * c_k + e * sum_j s_j + T_ul + T_dl <= deadline   (each device k)
//!      s_j, p_k >= B_min
//! ```

use sagin_solver::{solve_lp, LinearProgram, Sense};

use super::{AllocationPlan, OptimizerError, OptimizerSettings};
use crate::channel::{private_downlink_rate, private_uplink_rate};
use crate::energy::{frame_feasible, shared_output, shared_phase_times, FrameLoad};
use crate::model::SystemModel;
use crate::par::map_range;
use crate::scenario::{PrivateBitsMode, SharedOutputMode};

const MBIT: f64 = 1e6;

/// Every input at `B_min` and the shared-phase times tight.
pub fn minimum_load(m: &SystemModel) -> FrameLoad {
    let c = &m.config;
    let (kk, nn) = (m.num_devices(), m.num_frames());
    let b = c.min_input_bits;
    let mut load = FrameLoad::zeros(kk, nn);
    let miss_inputs = vec![b; m.cache.num_misses()];
    for n in 0..nn {
        for k in m.cache.misses() {
            load.shared_in[k][n] = b;
        }
        load.shared_out[n] = shared_output(&miss_inputs, c);
        for k in 0..kk {
            load.private_in[k][n] = b;
            load.private_out[k][n] = c.output_ratio_private * b;
        }
        let t = shared_phase_times(n, &load, m);
        load.t_ul[n] = t.t_ul;
        load.t_dl[n] = t.t_dl;
    }
    load
}

/// One frame's allocation, in bits and seconds.
#[derive(Debug, Clone, PartialEq)]
struct FrameBits {
    shared_in: Vec<f64>,
    shared_out: f64,
    private_in: Vec<f64>,
    t_ul: f64,
    t_dl: f64,
    pivots: usize,
}

/// Per-device seconds per Mbit of private input, summed over upload,
/// execution and download.
fn private_cost(k: usize, n: usize, plan: &AllocationPlan, m: &SystemModel) -> f64 {
    let c = &m.config;
    let z = plan.z[k][n];
    let q = plan.trajectory.q[n];
    let ul = private_uplink_rate(k, n, z, q, &m.geometry, c) / MBIT;
    let dl = private_downlink_rate(k, n, z, q, &m.geometry, c) / MBIT;
    let cpu = c.devices[k].cpu_fraction * (z * c.leo_cpu_hz + (1.0 - z) * c.uav_cpu_hz);
    1.0 / ul + c.cycles_per_bit_private * MBIT / cpu + c.output_ratio_private / dl
}

fn solve_frame(
    n: usize,
    plan: &AllocationPlan,
    m: &SystemModel,
    s: &OptimizerSettings,
) -> Result<FrameBits, OptimizerError> {
    let c = &m.config;
    let kk = m.num_devices();
    let misses: Vec<usize> = m.cache.misses().collect();
    let nm = misses.len();
    let equal = c.shared_output_mode == SharedOutputMode::EqualInput;
    let ns = match (nm, equal) {
        (0, _) => 0,
        (_, true) => 1,
        (_, false) => nm,
    };
    let bmin = c.min_input_bits / MBIT;
    let deadline = c.frame_s - s.latency_margin_s;
    let (iv_ul, iv_dl) = (ns + kk, ns + kk + 1);
    let s_var = |j: usize| if equal { 0 } else { j };

    // B_S_out per Mbit of each shared variable.
    let out_coef = match c.shared_output_mode {
        SharedOutputMode::MissAverage => c.output_ratio_shared / nm.max(1) as f64,
        SharedOutputMode::MissSum => c.output_ratio_shared,
        SharedOutputMode::EqualInput => c.output_ratio_shared,
    };
    // Execution seconds per Mbit of each shared variable.
    let weight = if equal { nm as f64 } else { 1.0 };
    let exec_coef = weight * c.cycles_per_bit_shared * MBIT / (c.cpu_fraction_shared * c.leo_cpu_hz);
    let r_ul: Vec<f64> = misses.iter().map(|&k| m.rates.shared_ul[k][n] / MBIT).collect();
    let r_dl = m.rates.shared_dl_min[n] / MBIT;
    let cost: Vec<f64> = (0..kk).map(|k| private_cost(k, n, plan, m)).collect();

    // Minimum point: names the culprit when even B_min does not fit.
    let t_ul_min = r_ul.iter().map(|r| bmin / r).fold(0.0, f64::max);
    let out_min = if ns == 0 {
        c.output_ratio_shared * bmin
    } else {
        out_coef * bmin * ns as f64
    };
    let t_dl_min = out_min / r_dl;
    let exec_min = exec_coef * bmin * ns as f64;
    if !(t_ul_min + t_dl_min + exec_min).is_finite() || t_ul_min + t_dl_min + exec_min > c.frame_s + s.feas_tol {
        return Err(OptimizerError::BitsInfeasible { frame: n, device: None });
    }
    for (k, ck) in cost.iter().enumerate() {
        let used = ck * bmin + exec_min + t_ul_min + t_dl_min;
        if !used.is_finite() || used > c.frame_s + s.feas_tol {
            return Err(OptimizerError::BitsInfeasible {
                frame: n,
                device: Some(k),
            });
        }
    }

    let mut objective = vec![0.0; ns + kk + 2];
    for v in objective.iter_mut().take(ns) {
        *v = kk as f64 * out_coef;
    }
    for k in 0..kk {
        objective[ns + k] = c.output_ratio_private;
    }
    let mut lp = LinearProgram::new(Sense::Maximize, objective);
    for j in 0..ns {
        lp.set_bounds(j, bmin, f64::INFINITY);
    }
    for k in 0..kk {
        match c.private_bits_mode {
            PrivateBitsMode::Optimized => lp.set_bounds(ns + k, bmin, f64::INFINITY),
            PrivateBitsMode::FixedMin => lp.set_bounds(ns + k, bmin, bmin),
        }
    }
    for (j, r) in r_ul.iter().enumerate() {
        lp.add_le(vec![(s_var(j), 1.0 / r), (iv_ul, -1.0)], 0.0);
    }
    if ns > 0 {
        let mut row: Vec<(usize, f64)> = (0..ns).map(|j| (j, out_coef / r_dl)).collect();
        row.push((iv_dl, -1.0));
        lp.add_le(row, 0.0);
    } else {
        lp.set_bounds(iv_dl, t_dl_min, f64::INFINITY);
    }
    let hi = deadline.max(t_ul_min + t_dl_min + exec_min);
    for (k, ck) in cost.iter().enumerate() {
        let mut row: Vec<(usize, f64)> = (0..ns).map(|j| (j, exec_coef)).collect();
        row.push((ns + k, *ck));
        row.push((iv_ul, 1.0));
        row.push((iv_dl, 1.0));
        // Never tighter than the minimum point, which was checked above.
        lp.add_le(row, hi.max(ck * bmin + exec_min + t_ul_min + t_dl_min));
    }
    let sol = solve_lp(&lp, &s.lp)?;
    if !sol.status.is_optimal() {
        return Err(OptimizerError::BitsSolver {
            frame: n,
            status: sol.status,
        });
    }

    let x = &sol.x;
    let mut shared_in = vec![0.0; kk];
    let mut miss_inputs = Vec::with_capacity(nm);
    for (j, &k) in misses.iter().enumerate() {
        let v = x[s_var(j)].max(bmin) * MBIT;
        shared_in[k] = v;
        miss_inputs.push(v);
    }
    let shared_out = shared_output(&miss_inputs, c);
    let t_ul = misses
        .iter()
        .map(|&k| shared_in[k] / m.rates.shared_ul[k][n])
        .fold(0.0, f64::max);
    let t_dl = shared_out / m.rates.shared_dl_min[n];
    let private_in = (0..kk).map(|k| x[ns + k].max(bmin) * MBIT).collect();
    Ok(FrameBits {
        shared_in,
        shared_out,
        private_in,
        t_ul,
        t_dl,
        pivots: sol.iterations,
    })
}

/// Installs the point a fraction `t` of the way from the incumbent inputs
/// to `f`, with outputs and shared-phase times recomputed tight.
fn install(load: &mut FrameLoad, n: usize, f: &FrameBits, t: f64, m: &SystemModel) {
    let c = &m.config;
    let mix = |old: f64, new: f64| old + t * (new - old);
    let mut miss_inputs = Vec::new();
    for k in 0..load.num_devices() {
        load.shared_in[k][n] = mix(load.shared_in[k][n], f.shared_in[k]);
        if !m.cache.hits[k] {
            miss_inputs.push(load.shared_in[k][n]);
        }
        load.private_in[k][n] = mix(load.private_in[k][n], f.private_in[k]);
        load.private_out[k][n] = c.output_ratio_private * load.private_in[k][n];
    }
    load.shared_out[n] = if t == 1.0 { f.shared_out } else { shared_output(&miss_inputs, c) };
    let times = shared_phase_times(n, load, m);
    load.t_ul[n] = if t == 1.0 { f.t_ul } else { times.t_ul };
    load.t_dl[n] = if t == 1.0 { f.t_dl } else { times.t_dl };
}

/// Re-optimizes every frame's bits; returns the new load and the total
/// number of simplex pivots. When the LP answer fails the latency audit by
/// rounding, the frame moves only as far toward it as the audit allows; a
/// frame keeps its incumbent values unless that improves it.
pub fn optimize_bits(
    plan: &AllocationPlan,
    m: &SystemModel,
    s: &OptimizerSettings,
) -> Result<(FrameLoad, usize), OptimizerError> {
    let frames = map_range(s.parallelism, m.num_frames(), |n| solve_frame(n, plan, m, s));
    let mut load = plan.load.clone();
    let mut pivots = 0;
    for (n, f) in frames.into_iter().enumerate() {
        let f = f?;
        pivots += f.pivots;
        let z = plan.z_column(n);
        let q = plan.trajectory.q[n];
        let at = |t: f64| {
            let mut trial = load.clone();
            install(&mut trial, n, &f, t, m);
            let ok = frame_feasible(n, &z, q, &trial, m).feasible(s.feas_tol);
            (trial, ok)
        };
        let (mut trial, mut ok) = at(1.0);
        if !ok {
            // Deadline residuals are concave along the segment, so the
            // feasible part is an interval starting at the incumbent.
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if at(mid).1 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (trial, ok) = at(lo);
        }
        if ok && trial.frame_bits(n) >= load.frame_bits(n) {
            load = trial;
        }
    }
    Ok((load, pivots))
}
