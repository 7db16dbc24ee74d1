//! CPU-cycle accounting, per-frame latency, propulsion power and the
//! energy-efficiency objective.

use std::io::Write;

use thiserror::Error;

use crate::channel::{private_downlink_rate, private_uplink_rate};
use crate::geometry::{norm, UavTrajectory, Vec2};
use crate::model::SystemModel;
use crate::scenario::{ScenarioConfig, SharedOutputMode};

/// Speeds below this are rejected by the propulsion model.
pub const MIN_SPEED_MPS: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("speed {speed:.3e} m/s at frame {frame} is below the fixed-wing floor")]
    ZeroSpeed { frame: usize, speed: f64 },
}

/// Bits and shared-phase latencies for every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLoad {
    /// `shared_in[k][n]`; zero for cache-hit devices.
    pub shared_in: Vec<Vec<f64>>,
    /// `shared_out[n]`, multicast to every device.
    pub shared_out: Vec<f64>,
    pub private_in: Vec<Vec<f64>>,
    pub private_out: Vec<Vec<f64>>,
    pub t_ul: Vec<f64>,
    pub t_dl: Vec<f64>,
}

impl FrameLoad {
    pub fn zeros(k: usize, n: usize) -> Self {
        Self {
            shared_in: vec![vec![0.0; n]; k],
            shared_out: vec![0.0; n],
            private_in: vec![vec![0.0; n]; k],
            private_out: vec![vec![0.0; n]; k],
            t_ul: vec![0.0; n],
            t_dl: vec![0.0; n],
        }
    }

    pub fn num_frames(&self) -> usize {
        self.shared_out.len()
    }

    pub fn num_devices(&self) -> usize {
        self.private_in.len()
    }

    /// `V_S[n]`: cycles to process the uploaded shared data.
    pub fn shared_cycles(&self, n: usize, hits: &[bool], c: &ScenarioConfig) -> f64 {
        c.cycles_per_bit_shared
            * self
                .shared_in
                .iter()
                .zip(hits)
                .filter(|(_, &h)| !h)
                .map(|(row, _)| row[n])
                .sum::<f64>()
    }

    /// `V̄[k][n]`.
    pub fn private_cycles(&self, k: usize, n: usize, c: &ScenarioConfig) -> f64 {
        c.cycles_per_bit_private * self.private_in[k][n]
    }

    /// Output bits delivered in frame `n`, summed over devices.
    pub fn frame_bits(&self, n: usize) -> f64 {
        let k = self.num_devices() as f64;
        k * self.shared_out[n] + self.private_out.iter().map(|r| r[n]).sum::<f64>()
    }
}

/// Multicast output size for the given cache-miss inputs.
pub fn shared_output(miss_inputs: &[f64], c: &ScenarioConfig) -> f64 {
    if miss_inputs.is_empty() {
        return c.output_ratio_shared * c.min_input_bits;
    }
    let sum: f64 = miss_inputs.iter().sum();
    match c.shared_output_mode {
        SharedOutputMode::MissAverage | SharedOutputMode::EqualInput => {
            c.output_ratio_shared * sum / miss_inputs.len() as f64
        }
        SharedOutputMode::MissSum => c.output_ratio_shared * sum,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTimes {
    pub t_ul: f64,
    pub t_exec: f64,
    pub t_dl: f64,
}

/// Shared-phase upload, execution and multicast times implied by the bits.
pub fn shared_phase_times(n: usize, load: &FrameLoad, m: &SystemModel) -> PhaseTimes {
    let c = &m.config;
    let t_ul = m
        .cache
        .misses()
        .map(|k| load.shared_in[k][n] / m.rates.shared_ul[k][n])
        .fold(0.0, f64::max);
    let t_exec = load.shared_cycles(n, &m.cache.hits, c) / (c.cpu_fraction_shared * c.leo_cpu_hz);
    let t_dl = load.shared_out[n] / m.rates.shared_dl_min[n];
    PhaseTimes { t_ul, t_exec, t_dl }
}

/// Private-phase latency of device `k` in frame `n` (left side of the
/// per-device deadline), including the shared execution time.
pub fn private_latency(k: usize, n: usize, z: f64, q_uav: Vec2, load: &FrameLoad, m: &SystemModel) -> f64 {
    let c = &m.config;
    let f_k = c.devices[k].cpu_fraction;
    let mut t = load.shared_cycles(n, &m.cache.hits, c) / (c.cpu_fraction_shared * c.leo_cpu_hz);
    if load.private_in[k][n] > 0.0 {
        t += load.private_in[k][n] / private_uplink_rate(k, n, z, q_uav, &m.geometry, c);
    }
    let v = load.private_cycles(k, n, c);
    if v > 0.0 {
        t += v / (f_k * (z * c.leo_cpu_hz + (1.0 - z) * c.uav_cpu_hz));
    }
    if load.private_out[k][n] > 0.0 {
        t += load.private_out[k][n] / private_downlink_rate(k, n, z, q_uav, &m.geometry, c);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameCheck {
    /// `Δ - T_ul - T_dl - latency_k` per device.
    pub residuals: Vec<f64>,
    /// Amount by which the stored `T_ul` / `T_dl` fall short of what the bits need.
    pub ul_shortfall: f64,
    pub dl_shortfall: f64,
}

impl FrameCheck {
    pub fn min_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn feasible(&self, tol: f64) -> bool {
        self.min_residual() >= -tol && self.ul_shortfall <= tol && self.dl_shortfall <= tol
    }
}

pub fn frame_feasible(n: usize, z: &[f64], q_uav: Vec2, load: &FrameLoad, m: &SystemModel) -> FrameCheck {
    let c = &m.config;
    let budget = c.frame_s - load.t_ul[n] - load.t_dl[n];
    let residuals = (0..m.num_devices())
        .map(|k| budget - private_latency(k, n, z[k], q_uav, load, m))
        .collect();
    let times = shared_phase_times(n, load, m);
    FrameCheck {
        residuals,
        ul_shortfall: (times.t_ul - load.t_ul[n]).max(0.0),
        dl_shortfall: (times.t_dl - load.t_dl[n]).max(0.0),
    }
}

/// Fixed-wing propulsion power.
pub fn propulsion_power(v: Vec2, a: Vec2, c: &ScenarioConfig) -> Result<f64, EnergyError> {
    let s = norm(v);
    if s < MIN_SPEED_MPS {
        return Err(EnergyError::ZeroSpeed { frame: 0, speed: s });
    }
    let a2 = a[0] * a[0] + a[1] * a[1];
    Ok(c.lambda1 * s.powi(3) + c.lambda2 / s * (1.0 + a2 / (c.gravity_mps2 * c.gravity_mps2)))
}

/// Per-frame energy `Δ · P(v_n, a_n)`.
pub fn frame_energy(t: &UavTrajectory, c: &ScenarioConfig) -> Result<Vec<f64>, EnergyError> {
    (0..t.num_frames())
        .map(|n| {
            propulsion_power(t.v[n], t.a[n], c)
                .map(|p| p * c.frame_s)
                .map_err(|_| EnergyError::ZeroSpeed {
                    frame: n,
                    speed: norm(t.v[n]),
                })
        })
        .collect()
}

/// Sum over frames of delivered bits divided by that frame's propulsion energy.
pub fn energy_efficiency(t: &UavTrajectory, load: &FrameLoad, c: &ScenarioConfig) -> Result<f64, EnergyError> {
    let e = frame_energy(t, c)?;
    Ok(e.iter().enumerate().map(|(n, e)| load.frame_bits(n) / e).sum())
}

pub fn total_energy(t: &UavTrajectory, c: &ScenarioConfig) -> Result<f64, EnergyError> {
    Ok(frame_energy(t, c)?.iter().sum())
}

/// Writes `frame, power_W, energy_J, T_ul, T_exec, T_dl, min_residual_s`.
pub fn write_audit_csv<W: Write>(
    out: W,
    t: &UavTrajectory,
    load: &FrameLoad,
    z: &[Vec<f64>],
    m: &SystemModel,
) -> Result<(), Box<dyn std::error::Error>> {
    let c = &m.config;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "power_W", "energy_J", "T_ul", "T_exec", "T_dl", "min_residual_s"])?;
    for n in 0..t.num_frames() {
        let p = propulsion_power(t.v[n], t.a[n], c)?;
        let times = shared_phase_times(n, load, m);
        let zn: Vec<f64> = z.iter().map(|r| r[n]).collect();
        let check = frame_feasible(n, &zn, t.q[n], load, m);
        w.write_record([
            n.to_string(),
            format!("{p:.9}"),
            format!("{:.9}", p * c.frame_s),
            format!("{:.9}", load.t_ul[n]),
            format!("{:.9}", times.t_exec),
            format!("{:.9}", load.t_dl[n]),
            format!("{:.9}", check.min_residual()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
