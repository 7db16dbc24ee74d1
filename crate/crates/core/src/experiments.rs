//! Scheme runs, comparisons and the data series behind the study figures.
//!
//! Every run is re-verified before it is returned: the energy efficiency is
//! recomputed from the plan tables and every frame is re-checked against its
//! deadline. Output files are deterministic for a fixed scenario and scheme;
//! wall-clock timings go to a separate `timing.csv`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::caching::{cache_for, CacheError, CachePlan};
use crate::energy::{frame_feasible, total_energy, EnergyError};
use crate::geometry::{dist2, UavTrajectory};
use crate::model::SystemModel;
use crate::optimizer::{alternating_optimize, AllocationPlan, OptimizerError, OptimizerSettings, Scheme, SolveReport};
use crate::par::map_slice;
use crate::scenario::{leo_orbit_preset, serialize_scenario, validate, ScenarioConfig, ScenarioError};

/// Version of the on-disk layout recorded in every manifest.
pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

/// Relative tolerance of the energy-efficiency re-verification.
pub const VERIFY_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("verification failed for {scheme}: {message}")]
    Verification { scheme: &'static str, message: String },
    #[error("unknown figure tag `{0}` (expected fig5..fig10)")]
    UnknownTag(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// True when the scenario admits no feasible plan, as opposed to a
    /// malformed request or an I/O problem.
    pub fn is_infeasibility(&self) -> bool {
        match self {
            ExperimentError::InvalidScenario(_) => true,
            ExperimentError::Optimizer(e) => e.is_infeasibility(),
            _ => false,
        }
    }
}

/// Hex SHA-256 of the canonical TOML form of a scenario.
pub fn config_digest(c: &ScenarioConfig) -> Result<String, ExperimentError> {
    let text = serialize_scenario(c)?;
    let hash = Sha256::digest(text.as_bytes());
    Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scheme: Scheme,
    pub config_digest: String,
    /// Scenario as run, after the scheme's adjustments.
    pub model: SystemModel,
    pub energy_efficiency: f64,
    pub total_energy_j: f64,
    pub report: SolveReport,
    pub plan: AllocationPlan,
}

impl RunResult {
    pub fn cache(&self) -> &CachePlan {
        &self.model.cache
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.model.config
    }
}

/// Recomputes the objective from the plan tables and re-checks every frame.
pub fn verify(run: &RunResult, feas_tol: f64) -> Result<(), ExperimentError> {
    let fail = |message: String| ExperimentError::Verification {
        scheme: run.scheme.name(),
        message,
    };
    let m = &run.model;
    let ee = run.plan.objective(m)?;
    let rel = (ee - run.energy_efficiency).abs() / ee.abs().max(f64::MIN_POSITIVE);
    if rel > VERIFY_REL_TOL {
        return Err(fail(format!(
            "recomputed {ee:.12e} bits/J, reported {:.12e}",
            run.energy_efficiency
        )));
    }
    for n in 0..m.num_frames() {
        let chk = frame_feasible(n, &run.plan.z_column(n), run.plan.trajectory.q[n], &run.plan.load, m);
        if !chk.feasible(feas_tol) {
            return Err(fail(format!("frame {n} misses its deadline by {:.3e} s", -chk.min_residual())));
        }
    }
    Ok(())
}

/// Runs one scheme on one scenario and verifies the result.
pub fn run_scheme(
    config: &ScenarioConfig,
    scheme: Scheme,
    settings: &OptimizerSettings,
) -> Result<RunResult, ExperimentError> {
    let report = validate(config);
    if !report.is_ok() {
        let msg: Vec<String> = report.errors.iter().map(ToString::to_string).collect();
        return Err(ExperimentError::InvalidScenario(msg.join("; ")));
    }
    let base = SystemModel::from_config(config.clone())?;
    let (plan, report) = alternating_optimize(&base, scheme, settings)?;
    let model = scheme.prepare(&base);
    let run = RunResult {
        scheme,
        config_digest: config_digest(config)?,
        energy_efficiency: report.final_objective(),
        total_energy_j: total_energy(&plan.trajectory, &model.config)?,
        model,
        report,
        plan,
    };
    verify(&run, settings.feas_tol)?;
    Ok(run)
}

/// Memoizes runs by scenario digest and scheme, so figures that share a
/// scenario do not solve it twice.
#[derive(Debug, Default)]
pub struct Runner {
    pub settings: OptimizerSettings,
    memo: Mutex<BTreeMap<(String, &'static str), Arc<RunResult>>>,
}

impl Runner {
    pub fn new(settings: OptimizerSettings) -> Self {
        Self {
            settings,
            memo: Mutex::default(),
        }
    }

    pub fn run(&self, config: &ScenarioConfig, scheme: Scheme) -> Result<Arc<RunResult>, ExperimentError> {
        // Keyed on the resolved cache pattern, so placement and the
        // equivalent explicit pattern share one run.
        let mut resolved = config.clone();
        resolved.cache_pattern = Some(cache_for(config)?.indicators());
        let key = (config_digest(&resolved)?, scheme.name());
        if let Some(r) = self.memo.lock().expect("memo poisoned").get(&key) {
            return Ok(Arc::clone(r));
        }
        let run = Arc::new(run_scheme(config, scheme, &self.settings)?);
        self.memo.lock().expect("memo poisoned").insert(key, Arc::clone(&run));
        Ok(run)
    }

    /// Runs every job, in parallel when enabled; results keep job order.
    pub fn run_all(&self, jobs: &[(ScenarioConfig, Scheme)]) -> Result<Vec<Arc<RunResult>>, ExperimentError> {
        map_slice(self.settings.parallelism, jobs, |(c, s)| self.run(c, *s))
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub scheme: &'static str,
    pub bits_per_joule: f64,
    pub total_energy_j: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub runs: Vec<Arc<RunResult>>,
}

impl Comparison {
    pub fn get(&self, scheme: Scheme) -> Option<&Arc<RunResult>> {
        self.runs.iter().find(|r| r.scheme == scheme)
    }
}

/// Runs each scheme on the same scenario.
pub fn compare_schemes(
    runner: &Runner,
    config: &ScenarioConfig,
    schemes: &[Scheme],
) -> Result<Comparison, ExperimentError> {
    let jobs: Vec<_> = schemes.iter().map(|&s| (config.clone(), s)).collect();
    let runs = runner.run_all(&jobs)?;
    let rows = runs
        .iter()
        .map(|r| ComparisonRow {
            scheme: r.scheme.name(),
            bits_per_joule: r.energy_efficiency,
            total_energy_j: r.total_energy_j,
            outer_iterations: r.report.q1,
            converged: r.report.converged,
            wall_time_s: r.report.wall_time_s,
        })
        .collect();
    Ok(Comparison { rows, runs })
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Collects the names of the files written into one directory.
struct Dir {
    root: PathBuf,
    files: Vec<String>,
}

impl Dir {
    fn new(root: &Path) -> Result<Self, ExperimentError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>, ExperimentError> {
        self.files.push(name.to_string());
        create(&self.root.join(name))
    }

    fn csv(&mut self, name: &str) -> Result<csv::Writer<BufWriter<File>>, ExperimentError> {
        Ok(csv::Writer::from_writer(self.file(name)?))
    }

    fn manifest<T: Serialize>(&mut self, body: &T) -> Result<(), ExperimentError> {
        let f = self.file("manifest.json")?;
        serde_json::to_writer_pretty(f, body)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    schema_version: u32,
    scheme: &'static str,
    config_digest: &'a str,
    energy_efficiency_bits_per_j: f64,
    total_energy_j: f64,
    outer_iterations: usize,
    lp_pivots: usize,
    sca_iterations: usize,
    dinkelbach_iterations: usize,
    converged: bool,
    cache_indicators: Vec<u8>,
    files: Vec<String>,
}

/// Writes `scenario.toml`, `trace.csv`, `plan.csv`, `trajectory.csv`,
/// `timing.csv` and `manifest.json` for one run.
pub fn write_run(dir: &Path, run: &RunResult, feas_tol: f64) -> Result<Vec<PathBuf>, ExperimentError> {
    verify(run, feas_tol)?;
    let mut d = Dir::new(dir)?;
    {
        use std::io::Write;
        let mut f = d.file("scenario.toml")?;
        f.write_all(serialize_scenario(run.config())?.as_bytes())?;
        f.flush()?;
    }
    run.report.write_trace_csv(d.file("trace.csv")?)?;
    run.plan.write_csv(d.file("plan.csv")?, &run.model)?;
    run.plan.trajectory.write_csv(d.file("trajectory.csv")?)?;
    let mut t = d.csv("timing.csv")?;
    t.write_record(["scheme", "wall_time_s", "newton_iterations"])?;
    t.write_record([
        run.scheme.name().to_string(),
        format!("{:.3}", run.report.wall_time_s),
        run.report.newton_iterations.to_string(),
    ])?;
    t.flush()?;
    let mut files = d.files.clone();
    files.push("manifest.json".into());
    d.manifest(&RunManifest {
        schema_version: OUTPUT_SCHEMA_VERSION,
        scheme: run.scheme.name(),
        config_digest: &run.config_digest,
        energy_efficiency_bits_per_j: run.energy_efficiency,
        total_energy_j: run.total_energy_j,
        outer_iterations: run.report.q1,
        lp_pivots: run.report.q2,
        sca_iterations: run.report.q3,
        dinkelbach_iterations: run.report.q4,
        converged: run.report.converged,
        cache_indicators: run.cache().indicators(),
        files,
    })?;
    Ok(d.files.iter().map(|f| d.root.join(f)).collect())
}

/// Environment variable naming a directory for solver debug dumps.
pub const DEBUG_DIR_ENV: &str = "SAGIN_DEBUG_DIR";

/// Writes the trajectory-stage audits of a run (expansion points, `alpha`
/// at every SCA exit, Dinkelbach residuals) as JSON.
pub fn write_debug_dump(dir: &Path, run: &RunResult) -> Result<PathBuf, ExperimentError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}-{}-sca.json", run.scheme.name(), &run.config_digest[..12]));
    serde_json::to_writer(create(&path)?, &run.report.sca)?;
    Ok(path)
}

/// Writes the comparison table, one trace per scheme and a manifest.
pub fn write_comparison(dir: &Path, cmp: &Comparison, feas_tol: f64) -> Result<Vec<PathBuf>, ExperimentError> {
    for r in &cmp.runs {
        verify(r, feas_tol)?;
    }
    let mut d = Dir::new(dir)?;
    let mut w = d.csv("comparison.csv")?;
    w.write_record(["scheme", "bits_per_J", "total_energy_J", "outer_iterations", "converged"])?;
    for row in &cmp.rows {
        w.write_record([
            row.scheme.to_string(),
            format!("{:.9e}", row.bits_per_joule),
            format!("{:.6}", row.total_energy_j),
            row.outer_iterations.to_string(),
            row.converged.to_string(),
        ])?;
    }
    w.flush()?;
    let mut t = d.csv("timing.csv")?;
    t.write_record(["scheme", "wall_time_s"])?;
    for row in &cmp.rows {
        t.write_record([row.scheme.to_string(), format!("{:.3}", row.wall_time_s)])?;
    }
    t.flush()?;
    write_traces(&mut d, cmp.runs.iter().map(|r| (r.scheme.name().to_string(), r.as_ref())))?;
    finish_manifest(&mut d, "compare", &cmp.runs)
}

fn write_traces<'a>(d: &mut Dir, runs: impl Iterator<Item = (String, &'a RunResult)>) -> Result<(), ExperimentError> {
    let mut w = d.csv("convergence.csv")?;
    w.write_record(["series", "outer_iter", "stage", "objective_bits_per_J"])?;
    for (label, r) in runs {
        for t in &r.report.trace {
            w.write_record([
                label.clone(),
                t.outer_iter.to_string(),
                t.stage.name().to_string(),
                format!("{:.9e}", t.objective),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SetManifest<'a> {
    schema_version: u32,
    kind: &'a str,
    runs: Vec<RunEntry<'a>>,
    files: Vec<String>,
}

#[derive(Serialize)]
struct RunEntry<'a> {
    scheme: &'static str,
    config_digest: &'a str,
    energy_efficiency_bits_per_j: f64,
    total_energy_j: f64,
}

fn finish_manifest(d: &mut Dir, kind: &str, runs: &[Arc<RunResult>]) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut files = d.files.clone();
    files.push("manifest.json".into());
    d.manifest(&SetManifest {
        schema_version: OUTPUT_SCHEMA_VERSION,
        kind,
        runs: runs
            .iter()
            .map(|r| RunEntry {
                scheme: r.scheme.name(),
                config_digest: &r.config_digest,
                energy_efficiency_bits_per_j: r.energy_efficiency,
                total_energy_j: r.total_energy_j,
            })
            .collect(),
        files,
    })?;
    Ok(d.files.iter().map(|f| d.root.join(f)).collect())
}

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FigureTag {
    /// Convergence traces of all schemes.
    Fig5,
    /// Energy efficiency against mission length.
    Fig6,
    /// Trajectories under three cache patterns.
    Fig7,
    /// Offloading decisions and output bits of devices 1 and 7.
    Fig8,
    /// Trajectories under three UAV speed and acceleration limits.
    Fig9,
    /// Trajectories under three LEO ground tracks.
    Fig10,
}

impl FigureTag {
    pub const ALL: [FigureTag; 6] = [
        FigureTag::Fig5,
        FigureTag::Fig6,
        FigureTag::Fig7,
        FigureTag::Fig8,
        FigureTag::Fig9,
        FigureTag::Fig10,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FigureTag::Fig5 => "fig5",
            FigureTag::Fig6 => "fig6",
            FigureTag::Fig7 => "fig7",
            FigureTag::Fig8 => "fig8",
            FigureTag::Fig9 => "fig9",
            FigureTag::Fig10 => "fig10",
        }
    }
}

impl FromStr for FigureTag {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FigureTag::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ExperimentError::UnknownTag(s.to_string()))
    }
}

/// Mission lengths, in frames, of the mission-time sweep.
pub const MISSION_FRAMES: [usize; 5] = [40, 50, 60, 70, 80];
/// Right-hand pair of devices miss the cache.
pub const PATTERN_RIGHT_MISS: [u8; 8] = [1, 1, 1, 1, 1, 1, 0, 0];
/// Left-hand pair of devices miss the cache.
pub const PATTERN_LEFT_MISS: [u8; 8] = [0, 0, 1, 1, 1, 1, 1, 1];
/// Cache misses concentrated in the center of the area.
pub const PATTERN_CENTER_MISS: [u8; 8] = [1, 1, 1, 0, 0, 1, 1, 1];
/// `(v_max, a_max)` presets of the UAV capability study.
pub const UAV_LIMITS: [(f64, f64); 3] = [(30.0, 3.0), (40.0, 4.0), (50.0, 5.0)];
/// Devices whose decisions and bits are traced, 0-based.
pub const TRACED_DEVICES: [usize; 2] = [0, 6];

/// One labelled run of a figure.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub run: Arc<RunResult>,
}

#[derive(Debug, Clone)]
pub struct FigureData {
    pub tag: FigureTag,
    pub series: Vec<Series>,
    pub files: Vec<PathBuf>,
}

impl FigureData {
    pub fn series(&self, label: &str) -> Option<&RunResult> {
        self.series.iter().find(|s| s.label == label).map(|s| s.run.as_ref())
    }
}

/// Mean over frames of the horizontal UAV distance to the given devices.
pub fn mean_distance_to(t: &UavTrajectory, m: &SystemModel, devices: &[usize]) -> f64 {
    if devices.is_empty() {
        return 0.0;
    }
    let nn = t.num_frames();
    let total: f64 = (0..nn)
        .map(|n| {
            devices
                .iter()
                .map(|&k| dist2(t.q[n], m.geometry.devices[k]).sqrt())
                .sum::<f64>()
                / devices.len() as f64
        })
        .sum();
    total / nn as f64
}

/// Share of LEO decisions (`z = 1`) falling in frames `window`, over all
/// LEO decisions; `None` if there are none.
pub fn leo_share_in_window(plan: &AllocationPlan, window: std::ops::Range<usize>) -> Option<f64> {
    let mut inside = 0usize;
    let mut total = 0usize;
    for row in &plan.z {
        for (n, &z) in row.iter().enumerate() {
            if z == 1.0 {
                total += 1;
                inside += usize::from(window.contains(&n));
            }
        }
    }
    (total > 0).then(|| inside as f64 / total as f64)
}

/// Frames around the midpoint during which the LEO is overhead: a third of
/// the mission on each side of it.
pub fn overhead_window(num_frames: usize) -> std::ops::Range<usize> {
    let third = num_frames / 3;
    third..num_frames - third
}

fn with_pattern(base: &ScenarioConfig, pattern: &[u8]) -> ScenarioConfig {
    let mut c = base.clone();
    c.cache_pattern = Some(pattern.to_vec());
    c
}

fn write_trajectories(d: &mut Dir, series: &[Series]) -> Result<(), ExperimentError> {
    let mut w = d.csv("trajectories.csv")?;
    w.write_record(["series", "frame", "x_m", "y_m", "speed_mps"])?;
    for s in series {
        let t = &s.run.plan.trajectory;
        for (n, q) in t.q.iter().enumerate() {
            let v = t.v[n];
            w.write_record([
                s.label.clone(),
                n.to_string(),
                format!("{:.6}", q[0]),
                format!("{:.6}", q[1]),
                format!("{:.6}", v[0].hypot(v[1])),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_devices(d: &mut Dir, run: &RunResult) -> Result<(), ExperimentError> {
    let mut w = d.csv("devices.csv")?;
    w.write_record(["device", "x_m", "y_m", "cache_hit"])?;
    for (k, p) in run.model.geometry.devices.iter().enumerate() {
        w.write_record([
            (k + 1).to_string(),
            format!("{:.3}", p[0]),
            format!("{:.3}", p[1]),
            u8::from(run.cache().hits[k]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(d: &mut Dir, series: &[Series], reference: Option<&RunResult>) -> Result<(), ExperimentError> {
    let mut w = d.csv("summary.csv")?;
    w.write_record([
        "series",
        "scheme",
        "bits_per_J",
        "total_energy_J",
        "energy_gap_vs_reference_J",
        "mean_distance_to_miss_devices_m",
        "mean_distance_to_all_devices_m",
    ])?;
    for s in series {
        let r = &s.run;
        let misses: Vec<usize> = r.cache().misses().collect();
        let all: Vec<usize> = (0..r.model.num_devices()).collect();
        let gap = reference.map_or(String::new(), |b| format!("{:.6}", r.total_energy_j - b.total_energy_j));
        w.write_record([
            s.label.clone(),
            r.scheme.name().to_string(),
            format!("{:.9e}", r.energy_efficiency),
            format!("{:.6}", r.total_energy_j),
            gap,
            format!("{:.3}", mean_distance_to(&r.plan.trajectory, &r.model, &misses)),
            format!("{:.3}", mean_distance_to(&r.plan.trajectory, &r.model, &all)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn figure_series(
    tag: FigureTag,
    runner: &Runner,
    base: &ScenarioConfig,
) -> Result<Vec<Series>, ExperimentError> {
    let jobs: Vec<(String, ScenarioConfig, Scheme)> = match tag {
        FigureTag::Fig5 => Scheme::ALL
            .iter()
            .map(|&s| (s.name().to_string(), base.clone(), s))
            .collect(),
        FigureTag::Fig6 => MISSION_FRAMES
            .iter()
            .flat_map(|&n| {
                let mut c = base.clone();
                c.num_frames = n;
                Scheme::ALL.map(move |s| (format!("{}@N={n}", s.name()), c.clone(), s))
            })
            .collect(),
        FigureTag::Fig7 | FigureTag::Fig8 => vec![
            ("jo_nc".into(), with_pattern(base, &PATTERN_RIGHT_MISS), Scheme::JoNc),
            ("jo_c_right_miss".into(), with_pattern(base, &PATTERN_RIGHT_MISS), Scheme::JoC),
            ("jo_c_left_miss".into(), with_pattern(base, &PATTERN_LEFT_MISS), Scheme::JoC),
        ],
        FigureTag::Fig9 => UAV_LIMITS
            .iter()
            .map(|&(v, a)| {
                let mut c = with_pattern(base, &PATTERN_CENTER_MISS);
                c.v_max_mps = v;
                c.a_max_mps2 = a;
                (format!("vmax{v}_amax{a}"), c, Scheme::JoC)
            })
            .collect(),
        FigureTag::Fig10 => (1..=3)
            .map(|id| {
                let mut c = with_pattern(base, &PATTERN_CENTER_MISS);
                let (anchor, dir) = leo_orbit_preset(id).expect("preset exists");
                c.leo_track_anchor_m = anchor;
                c.leo_track_direction = dir;
                (format!("orbit{id}"), c, Scheme::JoC)
            })
            .collect(),
    };
    // The decision study only needs the two right-miss runs.
    let jobs = if tag == FigureTag::Fig8 {
        jobs.into_iter().take(2).collect()
    } else {
        jobs
    };
    let runs = runner.run_all(&jobs.iter().map(|(_, c, s)| (c.clone(), *s)).collect::<Vec<_>>())?;
    Ok(jobs
        .into_iter()
        .zip(runs)
        .map(|((label, _, _), run)| Series { label, run })
        .collect())
}

/// Runs the scenarios behind `tag` and writes their data files to `out`.
pub fn reproduce_figure(
    tag: FigureTag,
    runner: &Runner,
    base: &ScenarioConfig,
    out: &Path,
) -> Result<FigureData, ExperimentError> {
    let series = figure_series(tag, runner, base)?;
    for s in &series {
        verify(&s.run, runner.settings.feas_tol)?;
    }
    let mut d = Dir::new(out)?;
    match tag {
        FigureTag::Fig5 => {
            write_traces(&mut d, series.iter().map(|s| (s.label.clone(), s.run.as_ref())))?;
        }
        FigureTag::Fig6 => {
            let mut w = d.csv("ee_vs_mission.csv")?;
            w.write_record(["num_frames", "mission_s", "scheme", "bits_per_J", "total_energy_J"])?;
            for s in &series {
                let c = s.run.config();
                w.write_record([
                    c.num_frames.to_string(),
                    format!("{:.1}", c.mission_s()),
                    s.run.scheme.name().to_string(),
                    format!("{:.9e}", s.run.energy_efficiency),
                    format!("{:.6}", s.run.total_energy_j),
                ])?;
            }
            w.flush()?;
        }
        FigureTag::Fig7 => {
            write_trajectories(&mut d, &series)?;
            write_devices(&mut d, &series[1].run)?;
            write_summary(&mut d, &series, Some(&series[0].run))?;
        }
        FigureTag::Fig8 => {
            let mut w = d.csv("decisions.csv")?;
            w.write_record([
                "series",
                "frame",
                "device",
                "z",
                "z_relaxed",
                "shared_out_bits",
                "private_out_bits",
                "t_dl_s",
            ])?;
            for s in &series {
                let p = &s.run.plan;
                for n in 0..s.run.model.num_frames() {
                    for &k in &TRACED_DEVICES {
                        w.write_record([
                            s.label.clone(),
                            n.to_string(),
                            (k + 1).to_string(),
                            format!("{}", p.z[k][n]),
                            format!("{:.6}", p.z_relaxed[k][n]),
                            format!("{:.3}", p.load.shared_out[n]),
                            format!("{:.3}", p.load.private_out[k][n]),
                            format!("{:.9}", p.load.t_dl[n]),
                        ])?;
                    }
                }
            }
            w.flush()?;
            let mut w = d.csv("leo_window.csv")?;
            w.write_record(["series", "window_start", "window_end", "leo_decisions", "share_in_window"])?;
            for s in &series {
                let nn = s.run.model.num_frames();
                let win = overhead_window(nn);
                let count = s.run.plan.z.iter().flatten().filter(|&&z| z == 1.0).count();
                let share = leo_share_in_window(&s.run.plan, win.clone()).map_or(String::new(), |v| format!("{v:.6}"));
                w.write_record([
                    s.label.clone(),
                    win.start.to_string(),
                    win.end.to_string(),
                    count.to_string(),
                    share,
                ])?;
            }
            w.flush()?;
        }
        FigureTag::Fig9 | FigureTag::Fig10 => {
            write_trajectories(&mut d, &series)?;
            write_devices(&mut d, &series[0].run)?;
            write_summary(&mut d, &series, None)?;
        }
    }
    let runs: Vec<_> = series.iter().map(|s| Arc::clone(&s.run)).collect();
    let files = finish_manifest(&mut d, tag.name(), &runs)?;
    Ok(FigureData { tag, series, files })
}
