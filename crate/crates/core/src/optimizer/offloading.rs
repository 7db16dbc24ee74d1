//! Offloading decisions with bits, shared-phase times and trajectory fixed.
//!
//! With everything else fixed the deadline residual of entry `(k, n)`
//! depends only on `z[k][n]` and is concave in it, so maximizing the
//! smallest residual splits into one scalar problem per entry. The relaxed
//! maximizer is found by golden-section search; the binary decision is the
//! endpoint with the larger residual.

use super::{AllocationPlan, OptimizerError, OptimizerSettings};
use crate::energy::private_latency;
use crate::model::SystemModel;
use crate::par::map_range;

#[derive(Debug, Clone, PartialEq)]
pub struct OffloadingResult {
    pub z: Vec<Vec<f64>>,
    pub z_relaxed: Vec<Vec<f64>>,
}

/// Deadline residual of device `k` in frame `n` at decision `z`.
pub fn entry_residual(k: usize, n: usize, z: f64, plan: &AllocationPlan, m: &SystemModel) -> f64 {
    let load = &plan.load;
    m.config.frame_s - load.t_ul[n] - load.t_dl[n] - private_latency(k, n, z, plan.trajectory.q[n], load, m)
}

/// Maximizer of a concave function on `[0, 1]`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    // The ends are not sampled by the interior search.
    let mid = 0.5 * (a + b);
    [0.0, mid, 1.0]
        .into_iter()
        .map(|z| (z, f(z)))
        .fold((mid, f64::NEG_INFINITY), |best, (z, v)| if v > best.1 { (z, v) } else { best })
        .0
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    relaxed: f64,
    relaxed_residual: f64,
    binary: f64,
    binary_residual: f64,
}

fn decide(k: usize, n: usize, plan: &AllocationPlan, m: &SystemModel) -> Entry {
    let f = |z: f64| entry_residual(k, n, z, plan, m);
    let relaxed = golden_section_max(f, 1e-9);
    let (r0, r1) = (f(0.0), f(1.0));
    let (binary, binary_residual) = if r1 >= r0 { (1.0, r1) } else { (0.0, r0) };
    Entry {
        relaxed,
        relaxed_residual: f(relaxed),
        binary,
        binary_residual,
    }
}

/// Relaxed and rounded decisions for every entry.
pub fn optimize_offloading(
    plan: &AllocationPlan,
    m: &SystemModel,
    s: &OptimizerSettings,
) -> Result<OffloadingResult, OptimizerError> {
    let (kk, nn) = (m.num_devices(), m.num_frames());
    let entries = map_range(s.parallelism, kk * nn, |i| decide(i / nn, i % nn, plan, m));
    let mut z = vec![vec![0.0; nn]; kk];
    let mut z_relaxed = vec![vec![0.0; nn]; kk];
    for (i, e) in entries.iter().enumerate() {
        let (k, n) = (i / nn, i % nn);
        if e.binary_residual < -s.feas_tol {
            // The rounded choice is the better endpoint, so the other one
            // cannot repair it; keep the incumbent if it still fits.
            let incumbent = plan.z[k][n];
            if entry_residual(k, n, incumbent, plan, m) >= -s.feas_tol {
                z[k][n] = incumbent;
                z_relaxed[k][n] = e.relaxed;
                continue;
            }
            return Err(OptimizerError::RepairFailure {
                frame: n,
                device: k,
                residual: e.relaxed_residual.max(e.binary_residual),
            });
        }
        z[k][n] = e.binary;
        z_relaxed[k][n] = e.relaxed;
    }
    Ok(OffloadingResult { z, z_relaxed })
}
