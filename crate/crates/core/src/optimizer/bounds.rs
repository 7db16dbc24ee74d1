//! Tangent bounds used by the trajectory surrogate and the closed-form
//! Dinkelbach parameter.

use std::f64::consts::LN_2;

use crate::energy::MIN_SPEED_MPS;
use crate::geometry::{dist2, norm, Vec2};
use crate::model::SystemModel;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Uplink,
    Downlink,
}

/// Rate as a function of `u = ||q - q_dev||^2 + H_U^2`:
/// `R(u) = (W/K) log2(1 + gamma + A/u)`, convex and decreasing in `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCurve {
    pub bandwidth: f64,
    pub gamma: f64,
    pub a: f64,
}

impl RateCurve {
    pub fn new(link: Link, k: usize, n: usize, z: f64, m: &SystemModel) -> Self {
        let c = &m.config;
        let kk = c.num_devices() as f64;
        let (w, p_leo, p_uav) = match link {
            Link::Uplink => (c.bandwidth_ul_hz, c.power_device_w, c.power_device_w),
            Link::Downlink => (c.bandwidth_dl_hz, c.power_leo_w, c.power_uav_w),
        };
        let noise = c.noise_psd_w_per_hz * w / kk;
        Self {
            bandwidth: w / kk,
            gamma: p_leo * z * m.geometry.leo_gain[k][n] / noise,
            a: p_uav * (1.0 - z) * c.beta0 * c.fading_g2a / noise,
        }
    }

    pub fn rate(&self, u: f64) -> f64 {
        self.bandwidth * (self.gamma + self.a / u).ln_1p() / LN_2
    }

    /// `dR/du`.
    pub fn slope(&self, u: f64) -> f64 {
        -self.bandwidth * self.a / (LN_2 * u * ((1.0 + self.gamma) * u + self.a))
    }

    /// First-order expansion at `u0`, evaluated at `u`.
    pub fn tangent(&self, u: f64, u0: f64) -> f64 {
        self.rate(u0) + self.slope(u0) * (u - u0)
    }
}

fn taylor_bound(link: Link, k: usize, n: usize, q: Vec2, q_exp: Vec2, z: f64, m: &SystemModel) -> f64 {
    let h2 = m.config.uav_altitude_m.powi(2);
    let dev = m.geometry.devices[k];
    let curve = RateCurve::new(link, k, n, z, m);
    curve.tangent(dist2(q, dev) + h2, dist2(q_exp, dev) + h2)
}

/// Concave lower bound on the private uplink rate around `q_exp`.
pub fn taylor_ul_bound(k: usize, n: usize, q: Vec2, q_exp: Vec2, z: f64, m: &SystemModel) -> f64 {
    taylor_bound(Link::Uplink, k, n, q, q_exp, z, m)
}

/// Concave lower bound on the private downlink rate around `q_exp`.
pub fn taylor_dl_bound(k: usize, n: usize, q: Vec2, q_exp: Vec2, z: f64, m: &SystemModel) -> f64 {
    taylor_bound(Link::Downlink, k, n, q, q_exp, z, m)
}

/// Tangent-plane under-estimator of `||v||^2` at `v_exp`.
pub fn velocity_lower_bound(v: Vec2, v_exp: Vec2) -> f64 {
    let e2 = v_exp[0] * v_exp[0] + v_exp[1] * v_exp[1];
    e2 + 2.0 * (v_exp[0] * (v[0] - v_exp[0]) + v_exp[1] * (v[1] - v_exp[1]))
}

/// Propulsion expression with the speed slack `omega` in the `1/v` terms.
pub fn surrogate_energy(v: Vec2, a: Vec2, omega: f64, c: &ScenarioConfig) -> f64 {
    let a2 = a[0] * a[0] + a[1] * a[1];
    c.lambda1 * norm(v).powi(3) + c.lambda2 / omega + c.lambda2 * a2 / (c.gravity_mps2.powi(2) * omega)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("speed slack {omega} is at or below the floor {floor}")]
pub struct SlackFloorError {
    pub omega: f64,
    pub floor: f64,
}

/// Closed-form maximizer of `2 alpha sqrt(B) - alpha^2 E`.
pub fn dinkelbach_alpha(bits: f64, v: Vec2, a: Vec2, omega: f64, c: &ScenarioConfig) -> Result<f64, SlackFloorError> {
    if omega <= MIN_SPEED_MPS {
        return Err(SlackFloorError {
            omega,
            floor: MIN_SPEED_MPS,
        });
    }
    Ok(bits.sqrt() / surrogate_energy(v, a, omega, c))
}

/// `sum_n 2 alpha_n sqrt(B_n) - alpha_n^2 E_n`.
pub fn dinkelbach_value(alpha: &[f64], bits: &[f64], energy: &[f64]) -> f64 {
    alpha
        .iter()
        .zip(bits)
        .zip(energy)
        .map(|((a, b), e)| 2.0 * a * b.sqrt() - a * a * e)
        .sum()
}
