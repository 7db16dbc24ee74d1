//! Deterministic channel gains and achievable rates.
//!
//! Distances are horizontal separations plus the altitude term, with fading
//! folded in as fixed power factors. Uplinks and unicast downlinks use the
//! per-device bandwidth `W / K`; the multicast downlink uses the full band.

use std::io::Write;

use crate::geometry::{dist2, LeoOrbit, Vec2};
use crate::scenario::ScenarioConfig;

pub fn g2a_gain(q_uav: Vec2, q_dev: Vec2, c: &ScenarioConfig) -> f64 {
    c.beta0 * c.fading_g2a / (dist2(q_uav, q_dev) + c.uav_altitude_m * c.uav_altitude_m)
}

pub fn g2s_gain(q_dev: Vec2, q_leo_ground: Vec2, c: &ScenarioConfig) -> f64 {
    c.antenna_gain * c.beta1 * c.fading_g2s / (dist2(q_dev, q_leo_ground) + c.leo_altitude_m * c.leo_altitude_m)
}

/// `W log2(1 + p h / (N0 W))`.
pub fn shannon(bandwidth: f64, power: f64, gain: f64, n0: f64) -> f64 {
    bandwidth * (power * gain / (n0 * bandwidth)).ln_1p() / std::f64::consts::LN_2
}

/// Per-device positions and LEO gains; everything trajectory-independent.
#[derive(Debug, Clone)]
pub struct LinkGeometry {
    pub devices: Vec<Vec2>,
    /// Ground-track point per frame.
    pub leo: Vec<Vec2>,
    /// `leo_gain[k][n]`.
    pub leo_gain: Vec<Vec<f64>>,
}

impl LinkGeometry {
    pub fn new(c: &ScenarioConfig) -> Self {
        let orbit = LeoOrbit::from_config(c);
        let leo: Vec<Vec2> = (0..c.num_frames)
            .map(|n| orbit.ground_point(n, c.frame_s).expect("frame in range"))
            .collect();
        let devices: Vec<Vec2> = c.devices.iter().map(|d| d.position()).collect();
        let leo_gain = devices
            .iter()
            .map(|&d| leo.iter().map(|&l| g2s_gain(d, l, c)).collect())
            .collect();
        Self {
            devices,
            leo,
            leo_gain,
        }
    }
}

pub fn shared_uplink_rate(k: usize, n: usize, g: &LinkGeometry, c: &ScenarioConfig) -> f64 {
    let w = c.bandwidth_ul_hz / c.num_devices() as f64;
    shannon(w, c.power_device_w, g.leo_gain[k][n], c.noise_psd_w_per_hz)
}

pub fn shared_downlink_rate(k: usize, n: usize, g: &LinkGeometry, c: &ScenarioConfig) -> f64 {
    shannon(c.bandwidth_dl_hz, c.power_leo_w, g.leo_gain[k][n], c.noise_psd_w_per_hz)
}

pub fn shared_downlink_min(n: usize, g: &LinkGeometry, c: &ScenarioConfig) -> f64 {
    (0..c.num_devices())
        .map(|k| shared_downlink_rate(k, n, g, c))
        .fold(f64::INFINITY, f64::min)
}

pub fn private_uplink_rate(k: usize, n: usize, z: f64, q_uav: Vec2, g: &LinkGeometry, c: &ScenarioConfig) -> f64 {
    let w = c.bandwidth_ul_hz / c.num_devices() as f64;
    let h = z * g.leo_gain[k][n] + (1.0 - z) * g2a_gain(q_uav, g.devices[k], c);
    shannon(w, c.power_device_w, h, c.noise_psd_w_per_hz)
}

pub fn private_downlink_rate(k: usize, n: usize, z: f64, q_uav: Vec2, g: &LinkGeometry, c: &ScenarioConfig) -> f64 {
    let w = c.bandwidth_dl_hz / c.num_devices() as f64;
    let ph = z * c.power_leo_w * g.leo_gain[k][n] + (1.0 - z) * c.power_uav_w * g2a_gain(q_uav, g.devices[k], c);
    shannon(w, 1.0, ph, c.noise_psd_w_per_hz)
}

/// Shared-phase rate tables, fixed for a scenario.
#[derive(Debug, Clone)]
pub struct LinkRates {
    /// `shared_ul[k][n]`, bits/s.
    pub shared_ul: Vec<Vec<f64>>,
    pub shared_dl: Vec<Vec<f64>>,
    pub shared_dl_min: Vec<f64>,
}

impl LinkRates {
    pub fn new(g: &LinkGeometry, c: &ScenarioConfig) -> Self {
        let kk = c.num_devices();
        let nn = c.num_frames;
        let shared_ul = (0..kk)
            .map(|k| (0..nn).map(|n| shared_uplink_rate(k, n, g, c)).collect())
            .collect();
        let shared_dl: Vec<Vec<f64>> = (0..kk)
            .map(|k| (0..nn).map(|n| shared_downlink_rate(k, n, g, c)).collect())
            .collect();
        let shared_dl_min = (0..nn)
            .map(|n| shared_dl.iter().map(|r| r[n]).fold(f64::INFINITY, f64::min))
            .collect();
        Self {
            shared_ul,
            shared_dl,
            shared_dl_min,
        }
    }

    /// Frame x device table of the shared rates, plus private rates along a
    /// trajectory at both offloading endpoints.
    pub fn write_csv<W: Write>(
        &self,
        out: W,
        g: &LinkGeometry,
        q_uav: &[Vec2],
        c: &ScenarioConfig,
    ) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "frame",
            "device",
            "shared_ul_bps",
            "shared_dl_bps",
            "shared_dl_min_bps",
            "private_ul_uav_bps",
            "private_ul_leo_bps",
            "private_dl_uav_bps",
            "private_dl_leo_bps",
        ])?;
        for n in 0..self.shared_dl_min.len() {
            for k in 0..self.shared_ul.len() {
                w.write_record([
                    n.to_string(),
                    k.to_string(),
                    format!("{:.6e}", self.shared_ul[k][n]),
                    format!("{:.6e}", self.shared_dl[k][n]),
                    format!("{:.6e}", self.shared_dl_min[n]),
                    format!("{:.6e}", private_uplink_rate(k, n, 0.0, q_uav[n], g, c)),
                    format!("{:.6e}", private_uplink_rate(k, n, 1.0, q_uav[n], g, c)),
                    format!("{:.6e}", private_downlink_rate(k, n, 0.0, q_uav[n], g, c)),
                    format!("{:.6e}", private_downlink_rate(k, n, 1.0, q_uav[n], g, c)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
