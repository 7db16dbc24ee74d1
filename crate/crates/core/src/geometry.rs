//! UAV kinematics, LEO ground track and the coverage window.
//!
//! Frames are 0-based: frame `n` runs from `q[n]` with velocity `v[n]` and
//! acceleration `a[n]`, and `q[N]` is the final waypoint.

use std::io::Write;

use thiserror::Error;

use crate::scenario::ScenarioConfig;

pub type Vec2 = [f64; 2];

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("frame {frame} out of range 0..{frames}")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("endpoints unreachable: required speed {required:.3} m/s exceeds v_max {v_max:.3} m/s")]
    Unreachable { required: f64, v_max: f64 },
}

pub(crate) fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

pub(crate) fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn dist2(a: Vec2, b: Vec2) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1]
}

/// Length of the visible arc divided by the orbital speed.
pub fn coverage_time(c: &ScenarioConfig) -> f64 {
    2.0 * (c.earth_radius_m + c.leo_altitude_m) * c.coverage_angle_rad / c.leo_speed_mps
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeoOrbit {
    pub anchor: Vec2,
    pub direction: Vec2,
    pub speed_mps: f64,
    pub altitude_m: f64,
    /// Frame at which the ground track passes the anchor.
    pub midpoint_frame: usize,
    pub num_frames: usize,
}

impl LeoOrbit {
    pub fn from_config(c: &ScenarioConfig) -> Self {
        Self {
            anchor: c.leo_track_anchor_m,
            direction: c.leo_track_direction,
            speed_mps: c.leo_speed_mps,
            altitude_m: c.leo_altitude_m,
            midpoint_frame: c.num_frames.saturating_sub(1) / 2,
            num_frames: c.num_frames,
        }
    }

    /// Horizontal ground-track point at frame `n`.
    pub fn ground_point(&self, n: usize, delta: f64) -> Result<Vec2, GeometryError> {
        let p = leo_position(self, n, delta)?;
        Ok([p[0], p[1]])
    }
}

pub fn leo_position(orbit: &LeoOrbit, n: usize, delta: f64) -> Result<[f64; 3], GeometryError> {
    if n >= orbit.num_frames {
        return Err(GeometryError::FrameOutOfRange {
            frame: n,
            frames: orbit.num_frames,
        });
    }
    let s = orbit.speed_mps * (n as f64 - orbit.midpoint_frame as f64) * delta;
    Ok([
        orbit.anchor[0] + orbit.direction[0] * s,
        orbit.anchor[1] + orbit.direction[1] * s,
        orbit.altitude_m,
    ])
}

/// One step of the discrete double-integrator.
pub fn propagate(q: Vec2, v: Vec2, a: Vec2, delta: f64) -> (Vec2, Vec2) {
    let qn = [
        q[0] + v[0] * delta + 0.5 * a[0] * delta * delta,
        q[1] + v[1] * delta + 0.5 * a[1] * delta * delta,
    ];
    let vn = [v[0] + a[0] * delta, v[1] + a[1] * delta];
    (qn, vn)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UavTrajectory {
    /// `N + 1` waypoints.
    pub q: Vec<Vec2>,
    /// `N + 1` velocities.
    pub v: Vec<Vec2>,
    /// `N` accelerations.
    pub a: Vec<Vec2>,
}

impl UavTrajectory {
    /// Rolls the recursion forward from `(q0, v0)`.
    pub fn from_accelerations(q0: Vec2, v0: Vec2, a: &[Vec2], delta: f64) -> Self {
        let mut q = Vec::with_capacity(a.len() + 1);
        let mut v = Vec::with_capacity(a.len() + 1);
        q.push(q0);
        v.push(v0);
        for &an in a {
            let (qn, vn) = propagate(*q.last().unwrap(), *v.last().unwrap(), an, delta);
            q.push(qn);
            v.push(vn);
        }
        Self { q, v, a: a.to_vec() }
    }

    pub fn num_frames(&self) -> usize {
        self.a.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "qx", "qy", "vx", "vy", "ax", "ay"])?;
        for n in 0..self.q.len() {
            let a = self.a.get(n).copied().unwrap_or([0.0, 0.0]);
            w.write_record([
                n.to_string(),
                format!("{:.6}", self.q[n][0]),
                format!("{:.6}", self.q[n][1]),
                format!("{:.6}", self.v[n][0]),
                format!("{:.6}", self.v[n][1]),
                format!("{:.6}", a[0]),
                format!("{:.6}", a[1]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicResiduals {
    /// Largest relative recursion defect and the frame where it occurs.
    pub recursion_defect: f64,
    pub recursion_frame: Option<usize>,
    /// `max ||v|| - v_max` (negative means margin).
    pub speed_excess: f64,
    pub accel_excess: f64,
    pub start_defect: f64,
    pub end_defect: f64,
    pub feasible: bool,
}

pub const KINEMATIC_TOL: f64 = 1e-6;

pub fn kinematic_residuals(t: &UavTrajectory, c: &ScenarioConfig) -> KinematicResiduals {
    let d = c.frame_s;
    let scale = 1.0 + norm(c.uav_start_m).max(norm(c.uav_end_m));
    let mut worst = 0.0f64;
    let mut worst_frame = None;
    let consistent = t.q.len() == t.a.len() + 1 && t.v.len() == t.a.len() + 1;
    if consistent {
        for n in 0..t.a.len() {
            let (qn, vn) = propagate(t.q[n], t.v[n], t.a[n], d);
            let dq = norm(sub(qn, t.q[n + 1])) / scale;
            let dv = norm(sub(vn, t.v[n + 1])) / (1.0 + c.v_max_mps);
            let e = dq.max(dv);
            if e > worst {
                worst = e;
                worst_frame = Some(n);
            }
        }
    } else {
        worst = f64::INFINITY;
    }
    let speed_excess = t.v.iter().map(|&v| norm(v) - c.v_max_mps).fold(f64::NEG_INFINITY, f64::max);
    let accel_excess = t.a.iter().map(|&a| norm(a) - c.a_max_mps2).fold(f64::NEG_INFINITY, f64::max);
    let start_defect = t.q.first().map_or(f64::INFINITY, |&q| norm(sub(q, c.uav_start_m)));
    let end_defect = t.q.last().map_or(f64::INFINITY, |&q| norm(sub(q, c.uav_end_m)));
    let feasible = consistent
        && worst <= KINEMATIC_TOL
        && speed_excess <= KINEMATIC_TOL * c.v_max_mps
        && accel_excess <= KINEMATIC_TOL * c.a_max_mps2.max(1.0)
        && start_defect <= KINEMATIC_TOL * scale
        && end_defect <= KINEMATIC_TOL * scale;
    KinematicResiduals {
        recursion_defect: worst,
        recursion_frame: worst_frame,
        speed_excess,
        accel_excess,
        start_defect,
        end_defect,
        feasible,
    }
}

/// Constant-velocity path between the configured endpoints.
pub fn straight_line_trajectory(c: &ScenarioConfig) -> Result<UavTrajectory, GeometryError> {
    let n = c.num_frames;
    let t = c.mission_s();
    let v = [
        (c.uav_end_m[0] - c.uav_start_m[0]) / t,
        (c.uav_end_m[1] - c.uav_start_m[1]) / t,
    ];
    if norm(v) > c.v_max_mps {
        return Err(GeometryError::Unreachable {
            required: norm(v),
            v_max: c.v_max_mps,
        });
    }
    let mut traj = UavTrajectory::from_accelerations(c.uav_start_m, v, &vec![[0.0, 0.0]; n], c.frame_s);
    // Pin the end point exactly; the roll-out differs only by rounding.
    if let Some(last) = traj.q.last_mut() {
        *last = c.uav_end_m;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_scenario;

    #[test]
    fn coverage_window() {
        let c = default_scenario();
        let tv = coverage_time(&c);
        let oracle = 2.0 * 6_971_000.0 * (15.8 * std::f64::consts::PI / 180.0) / 7500.0;
        assert!((tv - oracle).abs() < 1e-9);
        assert!((tv - 512.6).abs() < 0.5);
        let mut z = c.clone();
        z.coverage_angle_rad = 0.0;
        assert_eq!(coverage_time(&z), 0.0);
        let mut f = c.clone();
        f.leo_speed_mps *= 2.0;
        assert!((coverage_time(&f) - tv / 2.0).abs() < 1e-9);
    }

    #[test]
    fn leo_track() {
        let c = default_scenario();
        let o = LeoOrbit::from_config(&c);
        let m = o.midpoint_frame;
        let p = leo_position(&o, m, 7.0).unwrap();
        assert_eq!([p[0], p[1]], c.leo_track_anchor_m);
        assert_eq!(p[2], 600e3);
        let p1 = leo_position(&o, m + 1, 7.0).unwrap();
        let step = norm(sub([p1[0], p1[1]], [p[0], p[1]]));
        assert!((step - 52_500.0).abs() < 1e-6);
        let down = LeoOrbit {
            direction: [0.0, -1.0],
            ..o.clone()
        };
        let p2 = leo_position(&down, m - 2, 7.0).unwrap();
        assert!((p2[0] - down.anchor[0]).abs() < 1e-9);
        assert!((p2[1] - (down.anchor[1] + 105_000.0)).abs() < 1e-6);
        assert!(leo_position(&o, 60, 7.0).is_err());
    }

    #[test]
    fn propagate_hand_values() {
        let (q, v) = propagate([0.0, 0.0], [16.0, 0.0], [1.0, 0.0], 7.0);
        assert_eq!(q, [136.5, 0.0]);
        assert_eq!(v, [23.0, 0.0]);
        let (q, v) = propagate([3.0, 4.0], [1.0, -2.0], [0.0, 0.0], 7.0);
        assert_eq!(q, [10.0, -10.0]);
        assert_eq!(v, [1.0, -2.0]);
        assert_eq!(propagate([3.0, 4.0], [0.0, 0.0], [0.0, 0.0], 7.0), ([3.0, 4.0], [0.0, 0.0]));
    }

    #[test]
    fn straight_line_defaults() {
        let c = default_scenario();
        let t = straight_line_trajectory(&c).unwrap();
        assert!((t.v[0][0] - 11.905).abs() < 1e-3 && (t.v[0][1] - 11.905).abs() < 1e-3);
        assert!((norm(t.v[0]) - 16.84).abs() < 1e-2);
        let r = kinematic_residuals(&t, &c);
        assert!(r.feasible, "{r:?}");
        assert!(r.recursion_defect < 1e-12);
    }

    #[test]
    fn degenerate_and_single_hop() {
        let mut c = default_scenario();
        c.uav_end_m = c.uav_start_m;
        let t = straight_line_trajectory(&c).unwrap();
        assert!(t.v.iter().all(|v| *v == [0.0, 0.0]));
        let mut c = default_scenario();
        c.num_frames = 1;
        c.v_max_mps = 2000.0;
        let t = straight_line_trajectory(&c).unwrap();
        assert_eq!(t.v[0], [5000.0 / 7.0, 5000.0 / 7.0]);
        assert_eq!(t.q[1], c.uav_end_m);
    }

    #[test]
    fn injected_velocity_defect() {
        let c = default_scenario();
        let mut t = straight_line_trajectory(&c).unwrap();
        t.v[10] = [t.v[10][0] * 10.0, t.v[10][1] * 10.0];
        let r = kinematic_residuals(&t, &c);
        assert!(!r.feasible);
        assert!(r.recursion_defect > 0.0);
        assert!(matches!(r.recursion_frame, Some(9) | Some(10)));
    }

    #[test]
    fn speed_on_the_limit() {
        let mut c = default_scenario();
        c.num_frames = 4;
        let t = UavTrajectory::from_accelerations([0.0, 0.0], [50.0, 0.0], &[[0.0, 0.0]; 4], 7.0);
        c.uav_start_m = [0.0, 0.0];
        c.uav_end_m = t.q[4];
        let r = kinematic_residuals(&t, &c);
        assert!(r.feasible);
        assert_eq!(r.speed_excess, 0.0);
    }
}
