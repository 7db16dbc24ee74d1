//! Scenario parameters, TOML ingestion and validation.
//!
//! Every physical quantity is stored in linear SI units. The TOML schema uses
//! explicit unit suffixes (`_hz`, `_w`, `_m`, ...) and accepts a dB spelling
//! for the noise density and fading factors, converted at load time.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether private input bits are decision variables of the bit LP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivateBitsMode {
    FixedMin,
    Optimized,
}

/// How the multicast shared output relates to the per-device shared inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedOutputMode {
    /// `O_S` times the mean input over cache-miss devices.
    MissAverage,
    /// `O_S` times the summed input over cache-miss devices.
    MissSum,
    /// All cache-miss devices upload the same amount; output is `O_S` times it.
    EqualInput,
}

/// Fixed offloading decision used by the NOO-C reference scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedDecision {
    AllLeo,
    AllUav,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Device {
    pub x_m: f64,
    pub y_m: f64,
    /// Requested file, 1-based.
    pub file: usize,
    pub cpu_fraction: f64,
}

impl Device {
    pub fn position(&self) -> [f64; 2] {
        [self.x_m, self.y_m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub num_frames: usize,
    pub frame_s: f64,
    pub num_files: usize,
    pub cache_capacity: usize,
    pub zipf_rho: f64,

    pub bandwidth_ul_hz: f64,
    pub bandwidth_dl_hz: f64,
    pub noise_psd_w_per_hz: f64,
    pub power_device_w: f64,
    pub power_uav_w: f64,
    pub power_leo_w: f64,

    pub beta0: f64,
    pub beta1: f64,
    pub antenna_gain: f64,
    pub fading_g2a: f64,
    pub fading_g2s: f64,
    /// Listed with the other fading factors but consumed by no link model.
    pub fading_a2a: f64,

    pub cycles_per_bit_shared: f64,
    pub cycles_per_bit_private: f64,
    pub cpu_fraction_shared: f64,
    pub leo_cpu_hz: f64,
    pub uav_cpu_hz: f64,

    pub output_ratio_shared: f64,
    pub output_ratio_private: f64,
    pub min_input_bits: f64,

    pub lambda1: f64,
    pub lambda2: f64,
    pub gravity_mps2: f64,
    pub v_max_mps: f64,
    pub a_max_mps2: f64,
    pub uav_altitude_m: f64,
    pub uav_start_m: [f64; 2],
    pub uav_end_m: [f64; 2],

    pub leo_altitude_m: f64,
    pub leo_speed_mps: f64,
    pub earth_radius_m: f64,
    pub coverage_angle_rad: f64,
    pub leo_track_anchor_m: [f64; 2],
    pub leo_track_direction: [f64; 2],

    pub devices: Vec<Device>,
    /// Explicit hit indicators overriding popularity-based placement.
    pub cache_pattern: Option<Vec<u8>>,

    pub private_bits_mode: PrivateBitsMode,
    pub shared_output_mode: SharedOutputMode,
    pub fixed_decision: FixedDecision,
    /// Seed for placing devices beyond the frozen preset.
    pub seed: u64,
}

/// Frozen 8-device layout inside the 10 km x 10 km service area.
pub const DEVICE_PRESET_M: [[f64; 2]; 8] = [
    [1500.0, 3000.0],
    [2000.0, 8500.0],
    [3500.0, 6000.0],
    [4500.0, 4500.0],
    [5500.0, 5500.0],
    [6500.0, 2500.0],
    [8000.0, 7500.0],
    [9000.0, 4000.0],
];

/// File requests of the preset devices; with two cached files the two
/// rightmost devices miss.
pub const FILE_PRESET: [usize; 8] = [1, 2, 1, 1, 2, 1, 3, 3];

pub const AREA_SIDE_M: f64 = 10_000.0;

/// Ground tracks used for the LEO orbit study: (anchor, direction).
pub fn leo_orbit_preset(id: usize) -> Option<([f64; 2], [f64; 2])> {
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let s5 = 1.0 / 5f64.sqrt();
    match id {
        1 => Some(([5000.0, 5000.0], [-s2, -s2])),
        2 => Some(([5000.0, 5000.0], [-s5, -2.0 * s5])),
        3 => Some(([0.0, 5000.0], [0.0, -1.0])),
        _ => None,
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm) * 1e-3
}

pub fn default_scenario() -> ScenarioConfig {
    let (anchor, direction) = leo_orbit_preset(1).unwrap();
    ScenarioConfig {
        num_frames: 60,
        frame_s: 7.0,
        num_files: 3,
        cache_capacity: 2,
        zipf_rho: 0.6,
        bandwidth_ul_hz: 40e6,
        bandwidth_dl_hz: 40e6,
        noise_psd_w_per_hz: dbm_to_watts(-174.0),
        power_device_w: 0.2,
        power_uav_w: 0.2,
        power_leo_w: 0.2,
        beta0: 1e-5,
        beta1: 1e-5,
        antenna_gain: 7000.0,
        fading_g2a: 1.0,
        fading_g2s: 1.0,
        fading_a2a: db_to_linear(30.0),
        cycles_per_bit_shared: 2640.0,
        cycles_per_bit_private: 2640.0 * 0.3,
        cpu_fraction_shared: 1.0,
        leo_cpu_hz: 1e11,
        uav_cpu_hz: 5e10,
        output_ratio_shared: 0.5,
        output_ratio_private: 0.5,
        min_input_bits: 5e6,
        lambda1: 9.26e-4,
        lambda2: 2250.0,
        gravity_mps2: 9.8,
        v_max_mps: 50.0,
        a_max_mps2: 5.0,
        uav_altitude_m: 1000.0,
        uav_start_m: [0.0, 5000.0],
        uav_end_m: [5000.0, 10000.0],
        leo_altitude_m: 600e3,
        leo_speed_mps: 7500.0,
        earth_radius_m: 6371e3,
        coverage_angle_rad: 15.8f64.to_radians(),
        leo_track_anchor_m: anchor,
        leo_track_direction: direction,
        devices: DEVICE_PRESET_M
            .iter()
            .zip(FILE_PRESET)
            .map(|(p, file)| Device {
                x_m: p[0],
                y_m: p[1],
                file,
                cpu_fraction: 0.8,
            })
            .collect(),
        cache_pattern: None,
        private_bits_mode: PrivateBitsMode::Optimized,
        shared_output_mode: SharedOutputMode::MissAverage,
        fixed_decision: FixedDecision::AllLeo,
        seed: 0,
    }
}

impl ScenarioConfig {
    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn mission_s(&self) -> f64 {
        self.num_frames as f64 * self.frame_s
    }

    /// Resizes the device table, keeping the preset prefix and placing
    /// extra devices uniformly at random (seeded) in the service area.
    pub fn resize_devices(&mut self, k: usize) {
        if k <= self.devices.len() {
            self.devices.truncate(k);
            if let Some(p) = self.cache_pattern.as_mut() {
                p.truncate(k);
            }
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let files = self.num_files.max(1);
        while self.devices.len() < k {
            let i = self.devices.len();
            let dev = if i < DEVICE_PRESET_M.len() {
                Device {
                    x_m: DEVICE_PRESET_M[i][0],
                    y_m: DEVICE_PRESET_M[i][1],
                    file: FILE_PRESET[i].min(files),
                    cpu_fraction: 0.8,
                }
            } else {
                Device {
                    x_m: rng.random_range(0.0..AREA_SIDE_M),
                    y_m: rng.random_range(0.0..AREA_SIDE_M),
                    file: rng.random_range(1..=files),
                    cpu_fraction: 0.8,
                }
            };
            self.devices.push(dev);
        }
        self.cache_pattern = None;
    }

    /// Places all devices uniformly at random (seeded) in the service area.
    pub fn randomize_devices(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let files = self.num_files.max(1);
        for d in &mut self.devices {
            d.x_m = rng.random_range(0.0..AREA_SIDE_M);
            d.y_m = rng.random_range(0.0..AREA_SIDE_M);
            d.file = rng.random_range(1..=files);
        }
    }
}

// ---------------------------------------------------------------------------
// TOML schema
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(skip_serializing_if = "Option::is_none")]
    num_devices: Option<usize>,
    num_frames: Option<usize>,
    frame_s: Option<f64>,
    num_files: Option<usize>,
    cache_capacity: Option<usize>,
    zipf_rho: Option<f64>,
    bandwidth_ul_hz: Option<f64>,
    bandwidth_dl_hz: Option<f64>,
    noise_psd_w_per_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_psd_dbm_per_hz: Option<f64>,
    power_device_w: Option<f64>,
    power_uav_w: Option<f64>,
    power_leo_w: Option<f64>,
    beta0: Option<f64>,
    beta1: Option<f64>,
    antenna_gain: Option<f64>,
    fading_g2a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fading_g2a_db: Option<f64>,
    fading_g2s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fading_g2s_db: Option<f64>,
    fading_a2a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fading_a2a_db: Option<f64>,
    cycles_per_bit_shared: Option<f64>,
    cycles_per_bit_private: Option<f64>,
    cpu_fraction_shared: Option<f64>,
    leo_cpu_hz: Option<f64>,
    uav_cpu_hz: Option<f64>,
    output_ratio_shared: Option<f64>,
    output_ratio_private: Option<f64>,
    min_input_bits: Option<f64>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    gravity_mps2: Option<f64>,
    v_max_mps: Option<f64>,
    a_max_mps2: Option<f64>,
    uav_altitude_m: Option<f64>,
    uav_start_m: Option<[f64; 2]>,
    uav_end_m: Option<[f64; 2]>,
    leo_altitude_m: Option<f64>,
    leo_speed_mps: Option<f64>,
    earth_radius_m: Option<f64>,
    coverage_angle_rad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coverage_angle_deg: Option<f64>,
    leo_track_anchor_m: Option<[f64; 2]>,
    leo_track_direction: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    leo_orbit_preset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cache_pattern: Option<Vec<u8>>,
    private_bits_mode: Option<PrivateBitsMode>,
    shared_output_mode: Option<SharedOutputMode>,
    fixed_decision: Option<FixedDecision>,
    seed: Option<u64>,
    #[serde(default, rename = "device", skip_serializing_if = "Vec::is_empty")]
    devices: Vec<Device>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("serialization failed: {0}")]
    Serialize(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn schema(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema {
        field: field.to_string(),
        message: message.into(),
    }
}

fn pick_linear(
    linear: Option<f64>,
    db: Option<f64>,
    field: &str,
    convert: fn(f64) -> f64,
) -> Result<Option<f64>, ScenarioError> {
    match (linear, db) {
        (Some(_), Some(_)) => Err(schema(field, "give either the linear or the dB spelling, not both")),
        (Some(v), None) => Ok(Some(v)),
        (None, Some(d)) => Ok(Some(convert(d))),
        (None, None) => Ok(None),
    }
}

/// Parses a TOML scenario. Omitted keys take their default values.
pub fn load_scenario(source: &str) -> Result<ScenarioConfig, ScenarioError> {
    let raw: RawScenario = toml::from_str(source).map_err(|e| {
        let msg = e.message().to_string();
        if msg.contains("unknown field") || msg.contains("invalid type") || msg.contains("unknown variant") {
            ScenarioError::Schema {
                field: e.span().map(|s| format!("byte {}", s.start)).unwrap_or_default(),
                message: msg,
            }
        } else {
            ScenarioError::Parse(e.to_string())
        }
    })?;
    let mut c = default_scenario();

    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(v) = raw.$f { c.$f = v; } )* };
    }
    take!(
        num_frames, frame_s, num_files, cache_capacity, zipf_rho, bandwidth_ul_hz, bandwidth_dl_hz,
        power_device_w, power_uav_w, power_leo_w, beta0, beta1, antenna_gain, cycles_per_bit_shared,
        cycles_per_bit_private, cpu_fraction_shared, leo_cpu_hz, uav_cpu_hz, output_ratio_shared,
        output_ratio_private, min_input_bits, lambda1, lambda2, gravity_mps2, v_max_mps, a_max_mps2,
        uav_altitude_m, uav_start_m, uav_end_m, leo_altitude_m, leo_speed_mps, earth_radius_m,
        private_bits_mode, shared_output_mode, fixed_decision, seed
    );
    if let Some(v) = pick_linear(raw.noise_psd_w_per_hz, raw.noise_psd_dbm_per_hz, "noise_psd", dbm_to_watts)? {
        c.noise_psd_w_per_hz = v;
    }
    if let Some(v) = pick_linear(raw.fading_g2a, raw.fading_g2a_db, "fading_g2a", db_to_linear)? {
        c.fading_g2a = v;
    }
    if let Some(v) = pick_linear(raw.fading_g2s, raw.fading_g2s_db, "fading_g2s", db_to_linear)? {
        c.fading_g2s = v;
    }
    if let Some(v) = pick_linear(raw.fading_a2a, raw.fading_a2a_db, "fading_a2a", db_to_linear)? {
        c.fading_a2a = v;
    }
    if let Some(v) = pick_linear(raw.coverage_angle_rad, raw.coverage_angle_deg, "coverage_angle", f64::to_radians)? {
        c.coverage_angle_rad = v;
    }
    if let Some(id) = raw.leo_orbit_preset {
        let (anchor, dir) = leo_orbit_preset(id).ok_or_else(|| schema("leo_orbit_preset", "expected 1, 2 or 3"))?;
        if raw.leo_track_anchor_m.is_some() || raw.leo_track_direction.is_some() {
            return Err(schema("leo_orbit_preset", "conflicts with an explicit ground track"));
        }
        c.leo_track_anchor_m = anchor;
        c.leo_track_direction = dir;
    }
    if let Some(v) = raw.leo_track_anchor_m {
        c.leo_track_anchor_m = v;
    }
    if let Some(v) = raw.leo_track_direction {
        c.leo_track_direction = v;
    }
    if !raw.devices.is_empty() {
        if raw.num_devices.is_some_and(|k| k != raw.devices.len()) {
            return Err(schema("num_devices", "disagrees with the number of [[device]] tables"));
        }
        c.devices = raw.devices;
    } else if let Some(k) = raw.num_devices {
        c.resize_devices(k);
    }
    if let Some(p) = raw.cache_pattern {
        c.cache_pattern = Some(p);
    }
    Ok(c)
}

pub fn load_scenario_file(path: &std::path::Path) -> Result<ScenarioConfig, ScenarioError> {
    load_scenario(&std::fs::read_to_string(path)?)
}

/// Serializes every field (linear spellings only) so that
/// `load_scenario(&serialize_scenario(c)) == c`.
pub fn serialize_scenario(c: &ScenarioConfig) -> Result<String, ScenarioError> {
    let raw = RawScenario {
        num_devices: None,
        num_frames: Some(c.num_frames),
        frame_s: Some(c.frame_s),
        num_files: Some(c.num_files),
        cache_capacity: Some(c.cache_capacity),
        zipf_rho: Some(c.zipf_rho),
        bandwidth_ul_hz: Some(c.bandwidth_ul_hz),
        bandwidth_dl_hz: Some(c.bandwidth_dl_hz),
        noise_psd_w_per_hz: Some(c.noise_psd_w_per_hz),
        noise_psd_dbm_per_hz: None,
        power_device_w: Some(c.power_device_w),
        power_uav_w: Some(c.power_uav_w),
        power_leo_w: Some(c.power_leo_w),
        beta0: Some(c.beta0),
        beta1: Some(c.beta1),
        antenna_gain: Some(c.antenna_gain),
        fading_g2a: Some(c.fading_g2a),
        fading_g2a_db: None,
        fading_g2s: Some(c.fading_g2s),
        fading_g2s_db: None,
        fading_a2a: Some(c.fading_a2a),
        fading_a2a_db: None,
        cycles_per_bit_shared: Some(c.cycles_per_bit_shared),
        cycles_per_bit_private: Some(c.cycles_per_bit_private),
        cpu_fraction_shared: Some(c.cpu_fraction_shared),
        leo_cpu_hz: Some(c.leo_cpu_hz),
        uav_cpu_hz: Some(c.uav_cpu_hz),
        output_ratio_shared: Some(c.output_ratio_shared),
        output_ratio_private: Some(c.output_ratio_private),
        min_input_bits: Some(c.min_input_bits),
        lambda1: Some(c.lambda1),
        lambda2: Some(c.lambda2),
        gravity_mps2: Some(c.gravity_mps2),
        v_max_mps: Some(c.v_max_mps),
        a_max_mps2: Some(c.a_max_mps2),
        uav_altitude_m: Some(c.uav_altitude_m),
        uav_start_m: Some(c.uav_start_m),
        uav_end_m: Some(c.uav_end_m),
        leo_altitude_m: Some(c.leo_altitude_m),
        leo_speed_mps: Some(c.leo_speed_mps),
        earth_radius_m: Some(c.earth_radius_m),
        coverage_angle_rad: Some(c.coverage_angle_rad),
        coverage_angle_deg: None,
        leo_track_anchor_m: Some(c.leo_track_anchor_m),
        leo_track_direction: Some(c.leo_track_direction),
        leo_orbit_preset: None,
        cache_pattern: c.cache_pattern.clone(),
        private_bits_mode: Some(c.private_bits_mode),
        shared_output_mode: Some(c.shared_output_mode),
        fixed_decision: Some(c.fixed_decision),
        seed: Some(c.seed),
        devices: c.devices.clone(),
    };
    toml::to_string(&raw).map_err(|e| ScenarioError::Serialize(e.to_string()))
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(Finding {
            field: field.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.warnings.push(Finding {
            field: field.into(),
            message: message.into(),
        });
    }
}

/// Checks the invariants, endpoint reachability and the coverage window,
/// then confirms constructively that the straight-line, minimum-bit
/// initialization admits a latency-feasible offloading choice.
pub fn validate(c: &ScenarioConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    if c.devices.is_empty() {
        r.error("device", "at least one device is required");
    }
    if c.num_frames == 0 {
        r.error("num_frames", "must be at least 1");
    }
    if c.num_files == 0 {
        r.error("num_files", "must be at least 1");
    }
    if c.cache_capacity > c.num_files {
        r.error("cache_capacity", "exceeds the number of files");
    }
    let positive = [
        ("frame_s", c.frame_s),
        ("bandwidth_ul_hz", c.bandwidth_ul_hz),
        ("bandwidth_dl_hz", c.bandwidth_dl_hz),
        ("noise_psd_w_per_hz", c.noise_psd_w_per_hz),
        ("power_device_w", c.power_device_w),
        ("power_uav_w", c.power_uav_w),
        ("power_leo_w", c.power_leo_w),
        ("beta0", c.beta0),
        ("beta1", c.beta1),
        ("antenna_gain", c.antenna_gain),
        ("fading_g2a", c.fading_g2a),
        ("fading_g2s", c.fading_g2s),
        ("leo_cpu_hz", c.leo_cpu_hz),
        ("uav_cpu_hz", c.uav_cpu_hz),
        ("lambda1", c.lambda1),
        ("lambda2", c.lambda2),
        ("gravity_mps2", c.gravity_mps2),
        ("v_max_mps", c.v_max_mps),
        ("a_max_mps2", c.a_max_mps2),
        ("uav_altitude_m", c.uav_altitude_m),
        ("leo_altitude_m", c.leo_altitude_m),
        ("leo_speed_mps", c.leo_speed_mps),
        ("earth_radius_m", c.earth_radius_m),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            r.error(name, format!("must be finite and strictly positive, got {v}"));
        }
    }
    let nonneg = [
        ("min_input_bits", c.min_input_bits),
        ("zipf_rho", c.zipf_rho),
        ("cycles_per_bit_shared", c.cycles_per_bit_shared),
        ("cycles_per_bit_private", c.cycles_per_bit_private),
        ("output_ratio_shared", c.output_ratio_shared),
        ("output_ratio_private", c.output_ratio_private),
        ("coverage_angle_rad", c.coverage_angle_rad),
    ];
    for (name, v) in nonneg {
        if !(v.is_finite() && v >= 0.0) {
            r.error(name, format!("must be finite and non-negative, got {v}"));
        }
    }
    if !(c.cpu_fraction_shared > 0.0 && c.cpu_fraction_shared <= 1.0) {
        r.error("cpu_fraction_shared", "must lie in (0, 1]");
    }
    if c.leo_cpu_hz < c.uav_cpu_hz {
        r.error("leo_cpu_hz", "the LEO server must be at least as fast as the UAV server");
    }
    let dnorm = c.leo_track_direction[0].hypot(c.leo_track_direction[1]);
    if (dnorm - 1.0).abs() > 1e-9 {
        r.error("leo_track_direction", format!("must have unit norm, got {dnorm}"));
    }
    for (i, d) in c.devices.iter().enumerate() {
        if d.file == 0 || d.file > c.num_files {
            r.error(&format!("device[{i}].file"), format!("must lie in 1..={}", c.num_files));
        }
        if !(d.cpu_fraction > 0.0 && d.cpu_fraction <= 1.0) {
            r.error(&format!("device[{i}].cpu_fraction"), "must lie in (0, 1]");
        }
        if !(d.x_m.is_finite() && d.y_m.is_finite()) {
            r.error(&format!("device[{i}]"), "position must be finite");
        }
    }
    if let Some(p) = &c.cache_pattern {
        if p.len() != c.devices.len() {
            r.error("cache_pattern", "length must equal the number of devices");
        }
        if p.iter().any(|&b| b > 1) {
            r.error("cache_pattern", "entries must be 0 or 1");
        }
    }
    if !r.is_ok() {
        return r;
    }

    let dist = (c.uav_end_m[0] - c.uav_start_m[0]).hypot(c.uav_end_m[1] - c.uav_start_m[1]);
    if dist / c.mission_s() > c.v_max_mps {
        r.error(
            "v_max_mps",
            format!(
                "endpoints unreachable: straight-line speed {:.3} m/s exceeds v_max",
                dist / c.mission_s()
            ),
        );
        return r;
    }
    let tv = crate::geometry::coverage_time(c);
    if c.mission_s() > tv {
        r.warn(
            "num_frames",
            format!(
                "mission exceeds coverage window ({:.1} s > {:.1} s)",
                c.mission_s(),
                tv
            ),
        );
    }
    match crate::model::SystemModel::from_config(c.clone()) {
        Ok(m) => {
            if let Err(e) = crate::optimizer::initial_plan(&m) {
                r.error("min_input_bits", format!("no feasible initialization: {e}"));
            }
        }
        Err(e) => r.error("cache_pattern", e.to_string()),
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_defaults() {
        let c = default_scenario();
        assert_eq!(c.num_frames, 60);
        assert_eq!(c.frame_s, 7.0);
        assert_eq!(c.num_devices(), 8);
        assert!((c.cycles_per_bit_private - 792.0).abs() < 1e-9);
        assert_eq!((c.cache_capacity, c.num_files, c.zipf_rho), (2, 3, 0.6));
    }

    #[test]
    fn noise_density_conversion() {
        let c = default_scenario();
        assert!((c.noise_psd_w_per_hz - 3.981e-21).abs() < 1e-24);
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(load_scenario("").unwrap(), default_scenario());
    }

    #[test]
    fn override_k_and_n() {
        let c = load_scenario("num_devices = 2\nnum_frames = 3\n").unwrap();
        let mut d = default_scenario();
        d.num_frames = 3;
        d.devices.truncate(2);
        assert_eq!(c, d);
    }

    #[test]
    fn wrong_type_is_schema_error() {
        let err = load_scenario("v_max_mps = \"fast\"\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Schema { .. }), "{err}");
    }

    #[test]
    fn unknown_key_is_schema_error() {
        let err = load_scenario("v_max = 3.0\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Schema { .. }), "{err}");
    }

    #[test]
    fn db_spellings() {
        let c = load_scenario("noise_psd_dbm_per_hz = -174.0\nfading_g2a_db = 12.0\n").unwrap();
        assert!((c.noise_psd_w_per_hz - default_scenario().noise_psd_w_per_hz).abs() < 1e-30);
        assert!((c.fading_g2a - 15.848931924611133).abs() < 1e-9);
        assert!(load_scenario("noise_psd_dbm_per_hz = -174.0\nnoise_psd_w_per_hz = 1e-21\n").is_err());
    }

    #[test]
    fn round_trip() {
        let mut c = default_scenario();
        c.cache_pattern = Some(vec![1, 1, 1, 0, 0, 1, 1, 1]);
        c.shared_output_mode = SharedOutputMode::MissSum;
        let text = serialize_scenario(&c).unwrap();
        assert_eq!(load_scenario(&text).unwrap(), c);
    }

    #[test]
    fn extra_devices_are_seeded() {
        let a = load_scenario("num_devices = 12\nseed = 5\n").unwrap();
        let b = load_scenario("num_devices = 12\nseed = 5\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.devices[..8], default_scenario().devices[..]);
        assert!(a.devices[8..].iter().all(|d| (0.0..AREA_SIDE_M).contains(&d.x_m)));
    }

    #[test]
    fn default_validates_cleanly() {
        let r = validate(&default_scenario());
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    }

    #[test]
    fn unreachable_endpoints() {
        let mut c = default_scenario();
        c.v_max_mps = 0.1;
        let r = validate(&c);
        assert!(r.errors.iter().any(|f| f.message.contains("endpoints unreachable")));
    }

    #[test]
    fn long_mission_warns() {
        let mut c = default_scenario();
        c.num_frames = 80;
        let r = validate(&c);
        assert!(r.warnings.iter().any(|f| f.message.contains("mission exceeds coverage window")));
    }
}
