//! Alternating optimization of trajectory, bit allocation and offloading.
//!
//! Each outer iteration runs up to three stages, each with the other blocks
//! held fixed:
//!
//! 1. trajectory: successive convex approximation of the latency rows with
//!    per-frame Dinkelbach parameters for the sum-of-ratios objective;
//! 2. bits: one small linear program per frame;
//! 3. offloading: per-entry concave residual maximization, then rounding.
//!
//! Every stage is guarded so the objective never decreases.

pub mod bits;
pub mod bounds;
pub mod offloading;
pub mod trajectory;

use std::io::Write;
use std::time::Instant;

use sagin_solver::{ConvexSettings, LpSettings, SolverError, Status};
use thiserror::Error;

use crate::energy::{energy_efficiency, frame_feasible, EnergyError, FrameLoad};
use crate::geometry::{straight_line_trajectory, GeometryError, UavTrajectory, Vec2};
use crate::model::SystemModel;
use crate::par::Parallelism;
use crate::scenario::FixedDecision;

pub use bits::{minimum_load, optimize_bits};
pub use offloading::{optimize_offloading, OffloadingResult};
pub use trajectory::{optimize_trajectory, optimize_trajectory_scored, ScaAudit, ScaChain, TrajectoryResult};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("no feasible initialization: device {device} cannot meet the deadline in frame {frame} at minimum bits")]
    InfeasibleInitialization { frame: usize, device: usize },
    #[error("bit allocation infeasible in frame {frame} (device {device:?})")]
    BitsInfeasible { frame: usize, device: Option<usize> },
    #[error("bit allocation LP in frame {frame} ended with status {status}")]
    BitsSolver { frame: usize, status: Status },
    #[error("offloading has no feasible choice for device {device} in frame {frame} (best residual {residual:.3e} s)")]
    RepairFailure { frame: usize, device: usize, residual: f64 },
    #[error("trajectory subproblem rejected the incumbent: {0}")]
    Trajectory(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

impl OptimizerError {
    /// True when the failure means the scenario has no feasible plan.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            OptimizerError::InfeasibleInitialization { .. }
                | OptimizerError::BitsInfeasible { .. }
                | OptimizerError::RepairFailure { .. }
                | OptimizerError::Geometry(GeometryError::Unreachable { .. })
        )
    }
}

/// Complete decision state.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub trajectory: UavTrajectory,
    pub load: FrameLoad,
    /// `z[k][n]`, binary after each offloading stage.
    pub z: Vec<Vec<f64>>,
    /// Relaxed optimum from the last offloading stage (equal to `z` before one runs).
    pub z_relaxed: Vec<Vec<f64>>,
}

impl AllocationPlan {
    pub fn objective(&self, m: &SystemModel) -> Result<f64, EnergyError> {
        energy_efficiency(&self.trajectory, &self.load, &m.config)
    }

    pub fn z_column(&self, n: usize) -> Vec<f64> {
        self.z.iter().map(|r| r[n]).collect()
    }

    /// Smallest deadline residual over all frames and devices, together with
    /// the largest shortfall of the stored shared-phase times.
    pub fn min_residual(&self, m: &SystemModel) -> f64 {
        (0..m.num_frames())
            .map(|n| {
                let chk = frame_feasible(n, &self.z_column(n), self.trajectory.q[n], &self.load, m);
                chk.min_residual().min(0.0 - chk.ul_shortfall).min(0.0 - chk.dl_shortfall)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes one row per (device, frame).
    pub fn write_csv<W: Write>(&self, out: W, m: &SystemModel) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "frame",
            "device",
            "z",
            "z_relaxed",
            "shared_in_bits",
            "shared_out_bits",
            "private_in_bits",
            "private_out_bits",
            "t_ul_s",
            "t_dl_s",
            "residual_s",
        ])?;
        for n in 0..m.num_frames() {
            let chk = frame_feasible(n, &self.z_column(n), self.trajectory.q[n], &self.load, m);
            for k in 0..m.num_devices() {
                w.write_record([
                    n.to_string(),
                    k.to_string(),
                    format!("{}", self.z[k][n]),
                    format!("{:.6}", self.z_relaxed[k][n]),
                    format!("{:.3}", self.load.shared_in[k][n]),
                    format!("{:.3}", self.load.shared_out[n]),
                    format!("{:.3}", self.load.private_in[k][n]),
                    format!("{:.3}", self.load.private_out[k][n]),
                    format!("{:.9}", self.load.t_ul[n]),
                    format!("{:.9}", self.load.t_dl[n]),
                    format!("{:.9}", chk.residuals[k]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Which blocks a run may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Everything optimized, with caching.
    JoC,
    /// Straight-line trajectory.
    NtoC,
    /// Bits pinned at the minimum.
    NboC,
    /// Offloading pinned at the configured decision.
    NooC,
    /// Everything optimized, every device misses the cache.
    JoNc,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::JoC, Scheme::NtoC, Scheme::NboC, Scheme::NooC, Scheme::JoNc];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::JoC => "JO-C",
            Scheme::NtoC => "NTO-C",
            Scheme::NboC => "NBO-C",
            Scheme::NooC => "NOO-C",
            Scheme::JoNc => "JO-NC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name().replace('-', "").to_ascii_lowercase() == key)
    }

    pub fn optimizes_trajectory(self) -> bool {
        self != Scheme::NtoC
    }

    pub fn optimizes_bits(self) -> bool {
        self != Scheme::NboC
    }

    pub fn optimizes_offloading(self) -> bool {
        self != Scheme::NooC
    }

    /// The model this scheme runs on.
    pub fn prepare(self, m: &SystemModel) -> SystemModel {
        let mut out = m.clone();
        if self == Scheme::JoNc {
            out.cache = m.cache.all_miss();
        }
        out
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizerSettings {
    /// Stop when the fractional objective increase of an outer pass is below this.
    pub eps: f64,
    pub max_outer: usize,
    /// SCA stops when no waypoint moves more than this (m).
    pub sca_tol_m: f64,
    pub max_sca: usize,
    /// Dinkelbach exit threshold relative to the current objective.
    pub dinkelbach_rel_tol: f64,
    pub max_dinkelbach: usize,
    /// Halvings tried when a full SCA step lowers the true objective.
    pub max_step_halvings: usize,
    /// Keep every frame's surrogate power at or below its value at the
    /// previous SCA exit, so the per-frame Dinkelbach parameters never
    /// decrease between exits.
    pub frame_energy_cap: bool,
    /// Amplitude of the sideways detour starts, as a fraction of the
    /// endpoint distance; 0 runs SCA from the incumbent only.
    pub detour_fraction: f64,
    /// Rank the trajectory candidates by the objective one further bits
    /// and offloading pass would reach, instead of their own objective.
    pub lookahead: bool,
    /// Slack the bit stage leaves in every deadline (s).
    pub latency_margin_s: f64,
    /// Tolerance of the post-stage feasibility audits (s).
    pub feas_tol: f64,
    pub convex: ConvexSettings,
    pub lp: LpSettings,
    pub parallelism: Parallelism,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_outer: 15,
            sca_tol_m: 1.0,
            max_sca: 30,
            dinkelbach_rel_tol: 1e-4,
            max_dinkelbach: 20,
            max_step_halvings: 8,
            frame_energy_cap: true,
            detour_fraction: 0.25,
            lookahead: true,
            latency_margin_s: 1e-6,
            feas_tol: 1e-6,
            convex: ConvexSettings::default(),
            lp: LpSettings::default(),
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Init,
    Trajectory,
    Bits,
    Offloading,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Trajectory => "trajectory",
            Stage::Bits => "bits",
            Stage::Offloading => "offloading",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub outer_iter: usize,
    pub stage: Stage,
    /// bits/J after the stage.
    pub objective: f64,
    pub min_residual: f64,
    /// SCA iterations of this stage (trajectory only).
    pub sca_iterations: usize,
    /// Dinkelbach iterations of this stage (trajectory only).
    pub dinkelbach_iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub trace: Vec<TraceEntry>,
    /// Outer iterations.
    pub q1: usize,
    /// Bit-stage LP pivots.
    pub q2: usize,
    /// SCA iterations, summed.
    pub q3: usize,
    /// Dinkelbach iterations, summed.
    pub q4: usize,
    pub newton_iterations: usize,
    pub wall_time_s: f64,
    pub final_min_residual: f64,
    pub converged: bool,
    /// One entry per trajectory stage.
    pub sca: Vec<ScaAudit>,
}

impl SolveReport {
    pub fn objectives(&self) -> Vec<f64> {
        self.trace.iter().map(|t| t.objective).collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(0.0, |t| t.objective)
    }

    /// Largest relative decrease between consecutive trace entries.
    pub fn worst_decrease(&self) -> f64 {
        self.trace
            .windows(2)
            .map(|w| (w[0].objective - w[1].objective) / w[0].objective.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    /// Columns `outer_iter, stage, objective_bits_per_J, min_residual_s, Q3, Q4`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["outer_iter", "stage", "objective_bits_per_J", "min_residual_s", "Q3", "Q4"])?;
        for t in &self.trace {
            w.write_record([
                t.outer_iter.to_string(),
                t.stage.name().to_string(),
                format!("{:.9e}", t.objective),
                format!("{:.9e}", t.min_residual),
                t.sca_iterations.to_string(),
                t.dinkelbach_iterations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Offloading entry that meets the deadline at the given load, preferring
/// `preferred` and falling back to the other endpoint.
fn feasible_endpoint(
    k: usize,
    n: usize,
    preferred: f64,
    q: Vec2,
    load: &FrameLoad,
    m: &SystemModel,
    tol: f64,
) -> Option<f64> {
    let budget = m.config.frame_s - load.t_ul[n] - load.t_dl[n];
    [preferred, 1.0 - preferred]
        .into_iter()
        .find(|&z| budget - crate::energy::private_latency(k, n, z, q, load, m) >= -tol)
}

fn initial_plan_with(m: &SystemModel, preferred: f64, tol: f64) -> Result<AllocationPlan, OptimizerError> {
    let trajectory = straight_line_trajectory(&m.config)?;
    let load = minimum_load(m);
    let (kk, nn) = (m.num_devices(), m.num_frames());
    let mut z = vec![vec![0.0; nn]; kk];
    for n in 0..nn {
        for (k, row) in z.iter_mut().enumerate() {
            row[n] = feasible_endpoint(k, n, preferred, trajectory.q[n], &load, m, tol)
                .ok_or(OptimizerError::InfeasibleInitialization { frame: n, device: k })?;
        }
    }
    Ok(AllocationPlan {
        trajectory,
        load,
        z_relaxed: z.clone(),
        z,
    })
}

/// Straight line, minimum bits, LEO offloading wherever the deadline allows
/// it and UAV offloading elsewhere.
pub fn initial_plan(m: &SystemModel) -> Result<AllocationPlan, OptimizerError> {
    initial_plan_with(m, 1.0, OptimizerSettings::default().feas_tol)
}

fn fractional_increase(prev: f64, cur: f64) -> f64 {
    if prev > 0.0 {
        (cur - prev) / prev
    } else if cur > prev {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Objective after one bits, offloading, bits pass from `plan` with the
/// trajectory replaced by `t`.
fn lookahead(plan: &AllocationPlan, t: &UavTrajectory, m: &SystemModel, scheme: Scheme, s: &OptimizerSettings) -> Option<f64> {
    let mut p = plan.clone();
    p.trajectory = t.clone();
    p.load = optimize_bits(&p, m, s).ok()?.0;
    if scheme.optimizes_offloading() {
        let res = optimize_offloading(&p, m, s).ok()?;
        p.z = res.z;
        p.load = optimize_bits(&p, m, s).ok()?.0;
    }
    p.objective(m).ok()
}

/// Runs the alternating loop for `scheme` on `m`.
pub fn alternating_optimize(
    m: &SystemModel,
    scheme: Scheme,
    settings: &OptimizerSettings,
) -> Result<(AllocationPlan, SolveReport), OptimizerError> {
    let started = Instant::now();
    let m = scheme.prepare(m);
    let m = &m;
    let preferred = if scheme.optimizes_offloading() {
        1.0
    } else {
        match m.config.fixed_decision {
            FixedDecision::AllLeo => 1.0,
            FixedDecision::AllUav => 0.0,
        }
    };
    let mut plan = initial_plan_with(m, preferred, settings.feas_tol)?;
    let mut report = SolveReport::default();
    let mut objective = plan.objective(m)?;
    let entry = |outer_iter, stage, objective, plan: &AllocationPlan| TraceEntry {
        outer_iter,
        stage,
        objective,
        min_residual: plan.min_residual(m),
        sca_iterations: 0,
        dinkelbach_iterations: 0,
    };
    report.trace.push(entry(0, Stage::Init, objective, &plan));

    for outer in 1..=settings.max_outer {
        let before = objective;
        report.q1 = outer;

        if scheme.optimizes_trajectory() {
            let res = if settings.lookahead && scheme.optimizes_bits() {
                optimize_trajectory_scored(&plan, m, settings, |t, _| lookahead(&plan, t, m, scheme, settings))?
            } else {
                optimize_trajectory(&plan, m, settings)?
            };
            plan.trajectory = res.trajectory;
            objective = plan.objective(m)?;
            report.q3 += res.audit.sca_iterations;
            report.q4 += res.audit.dinkelbach_iterations;
            report.newton_iterations += res.audit.newton_iterations;
            let mut e = entry(outer, Stage::Trajectory, objective, &plan);
            e.sca_iterations = res.audit.sca_iterations;
            e.dinkelbach_iterations = res.audit.dinkelbach_iterations;
            report.trace.push(e);
            report.sca.push(res.audit);
        }

        if scheme.optimizes_bits() {
            let (load, pivots) = optimize_bits(&plan, m, settings)?;
            plan.load = load;
            report.q2 += pivots;
            objective = plan.objective(m)?;
            report.trace.push(entry(outer, Stage::Bits, objective, &plan));
        }

        if scheme.optimizes_offloading() {
            let res = optimize_offloading(&plan, m, settings)?;
            plan.z = res.z;
            plan.z_relaxed = res.z_relaxed;
            objective = plan.objective(m)?;
            report.trace.push(entry(outer, Stage::Offloading, objective, &plan));
        }

        if fractional_increase(before, objective) < settings.eps {
            report.converged = true;
            break;
        }
    }
    report.final_min_residual = plan.min_residual(m);
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((plan, report))
}
