//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). The exit code is zero unless
//! `SAGIN_ACCEPTANCE_STRICT=1` is set and some criterion failed.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use sagin_core::caching::{scenario_indicators, zipf_popularity};
use sagin_core::channel::{private_downlink_rate, private_uplink_rate};
use sagin_core::energy::propulsion_power;
use sagin_core::experiments::{
    compare_schemes, leo_share_in_window, mean_distance_to, overhead_window, reproduce_figure, FigureData,
    FigureTag, RunResult, Runner,
};
use sagin_core::geometry::coverage_time;
use sagin_core::optimizer::bounds::{taylor_dl_bound, taylor_ul_bound};
use sagin_core::optimizer::{initial_plan, optimize_bits};
use sagin_core::scenario::validate;
use sagin_core::{alternating_optimize, default_scenario, OptimizerSettings, ScenarioConfig, Scheme, SystemModel};

const MONOTONE_REL_TOL: f64 = 1e-9;
const MAX_OUTER: usize = 15;
const RUNTIME_LIMIT_S: f64 = 600.0;
const PARTIAL_FLOOR: f64 = 1.10;
const NO_CACHE_FLOOR: f64 = 1.05;
const RANDOM_SCENARIOS: usize = 20;
const WARM_RESIDUAL_FLOOR: f64 = -1e-8;
const CONVEXITY_FLOOR: f64 = -1e-9;
const TANGENCY_REL_TOL: f64 = 1e-9;
const TAYLOR_GRID: usize = 10;
const TAYLOR_HALF_SIDE_M: f64 = 2000.0;
const TINY_INSTANCES: u64 = 10;
const TINY_RATIO: f64 = 0.95;
const LP_REL_TOL: f64 = 1e-7;
const COVERAGE_TOL_S: f64 = 0.5;
const POWER_TOL_W: f64 = 0.01;
const ZIPF_TOL: f64 = 1e-3;
const GAP_TARGET_J: f64 = 31.0;
const GAP_BAND: f64 = 0.5;
const WINDOW_SHARE_FLOOR: f64 = 0.5;
/// Smallest trajectory shift that counts as a move; the SCA stop tolerance.
const MIN_SHIFT_M: f64 = 1.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(id: usize, o: &Outcome) {
    println!("criterion {id}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn trace_bytes(run: &RunResult) -> Vec<u8> {
    let mut buf = Vec::new();
    run.report.write_trace_csv(&mut buf).expect("trace serializes");
    buf
}

fn criterion_1(run: &RunResult, wall_s: f64) -> Outcome {
    let r = &run.report;
    let worst = r.worst_decrease();
    let pass = worst <= MONOTONE_REL_TOL && r.converged && r.q1 <= MAX_OUTER && wall_s < RUNTIME_LIMIT_S;
    outcome(
        pass,
        format!(
            "worst relative decrease {worst:.2e}, converged {} after {} outer iterations, {wall_s:.1} s",
            r.converged, r.q1
        ),
    )
}

fn criterion_2(runner: &Runner, base: &ScenarioConfig) -> Outcome {
    let cmp = match compare_schemes(runner, base, &Scheme::ALL) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("comparison failed: {e}")),
    };
    let ee = |s: Scheme| cmp.get(s).map_or(f64::NAN, |r| r.energy_efficiency);
    let (jo_c, nto, nbo, noo, jo_nc) = (ee(Scheme::JoC), ee(Scheme::NtoC), ee(Scheme::NboC), ee(Scheme::NooC), ee(Scheme::JoNc));
    let best_partial = nto.max(noo).max(nbo);
    let ordered = [nto, noo, jo_nc].iter().all(|&x| jo_c >= x && x > nbo);
    let pass = ordered && jo_c >= PARTIAL_FLOOR * best_partial && jo_c >= NO_CACHE_FLOOR * jo_nc;
    outcome(
        pass,
        format!(
            "JO-C {jo_c:.4e}, NTO-C {nto:.4e}, NOO-C {noo:.4e}, JO-NC {jo_nc:.4e}, NBO-C {nbo:.4e}; \
             JO-C / best partial {:.3}, JO-C / JO-NC {:.3}",
            jo_c / best_partial,
            jo_c / jo_nc
        ),
    )
}

/// Random scenario with at most 4 devices and 10 frames around a short,
/// reachable UAV path.
fn random_small_scenario(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut c = default_scenario();
        c.seed = seed;
        c.num_frames = rng.random_range(3..=10);
        c.resize_devices(rng.random_range(1..=4));
        c.uav_start_m = [0.0, 5000.0];
        let reach = 0.6 * c.v_max_mps * c.frame_s * c.num_frames as f64;
        let heading: f64 = rng.random_range(-0.5..0.5);
        let dist = rng.random_range(0.5 * reach..reach);
        c.uav_end_m = [dist * heading.cos(), 5000.0 + dist * heading.sin()];
        for d in &mut c.devices {
            d.x_m = rng.random_range(-800.0..reach + 800.0);
            d.y_m = rng.random_range(4000.0..6000.0);
        }
        c.cache_pattern = Some((0..c.num_devices()).map(|_| rng.random_range(0..2)).collect());
        if validate(&c).is_ok() {
            return c;
        }
    }
}

fn criterion_3() -> Outcome {
    let s = OptimizerSettings::default();
    let mut chains = 0usize;
    let mut worst_alpha_drop = 0.0f64;
    let mut worst_residual = f64::INFINITY;
    let mut failures = Vec::new();
    for seed in 0..RANDOM_SCENARIOS as u64 {
        let c = random_small_scenario(1000 + seed);
        let m = match SystemModel::from_config(c) {
            Ok(m) => m,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let report = match alternating_optimize(&m, Scheme::JoC, &s) {
            Ok((_, r)) => r,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        for chain in report.sca.iter().flat_map(|a| &a.chains) {
            chains += 1;
            for w in chain.alpha_exits.windows(2) {
                for (before, after) in w[0].iter().zip(&w[1]) {
                    let drop = (before - after) / before.abs().max(f64::MIN_POSITIVE);
                    worst_alpha_drop = worst_alpha_drop.max(drop);
                }
            }
            for &r in &chain.warm_start_residuals {
                worst_residual = worst_residual.min(r);
            }
        }
    }
    let pass = failures.is_empty()
        && chains > 0
        && worst_alpha_drop <= MONOTONE_REL_TOL
        && worst_residual >= WARM_RESIDUAL_FLOOR;
    let mut detail = format!(
        "{RANDOM_SCENARIOS} scenarios, {chains} SCA chains, worst relative alpha drop {worst_alpha_drop:.2e}, \
         smallest warm-start residual {worst_residual:.3e}"
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; errors: {}", failures.join("; ")));
    }
    outcome(pass, detail)
}

fn criterion_4() -> Outcome {
    let worst = psi_min_second_difference(1000, 101, 7);
    outcome(worst >= CONVEXITY_FLOOR, format!("smallest second difference {worst:.3e}"))
}

fn criterion_5(run: &RunResult) -> Outcome {
    let m = &run.model;
    let (g, c) = (&m.geometry, &m.config);
    let mut points = 0usize;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_tangency = 0.0f64;
    let step = 2.0 * TAYLOR_HALF_SIDE_M / (TAYLOR_GRID - 1) as f64;
    for audit in &run.report.sca {
        for q_exp in audit.chains.iter().flat_map(|ch| &ch.expansions) {
            for k in 0..m.num_devices() {
                for n in 0..c.num_frames {
                    let z = audit.z[k][n];
                    let e = q_exp[n];
                    let ul0 = private_uplink_rate(k, n, z, e, g, c);
                    let dl0 = private_downlink_rate(k, n, z, e, g, c);
                    worst_tangency = worst_tangency
                        .max((taylor_ul_bound(k, n, e, e, z, m) - ul0).abs() / ul0)
                        .max((taylor_dl_bound(k, n, e, e, z, m) - dl0).abs() / dl0);
                    for i in 0..TAYLOR_GRID {
                        for j in 0..TAYLOR_GRID {
                            let q = [
                                e[0] - TAYLOR_HALF_SIDE_M + i as f64 * step,
                                e[1] - TAYLOR_HALF_SIDE_M + j as f64 * step,
                            ];
                            let ul = private_uplink_rate(k, n, z, q, g, c);
                            let dl = private_downlink_rate(k, n, z, q, g, c);
                            worst_excess = worst_excess
                                .max((taylor_ul_bound(k, n, q, e, z, m) - ul) / ul)
                                .max((taylor_dl_bound(k, n, q, e, z, m) - dl) / dl);
                            points += 2;
                        }
                    }
                }
            }
        }
    }
    let pass = points > 0 && worst_excess <= TANGENCY_REL_TOL && worst_tangency < TANGENCY_REL_TOL;
    outcome(
        pass,
        format!(
            "{points} grid checks, largest relative overshoot {worst_excess:.2e}, \
             largest tangency error {worst_tangency:.2e}"
        ),
    )
}

fn lp_gap(c: ScenarioConfig, pattern: &[u8]) -> f64 {
    let cache = scenario_indicators(pattern, &c).expect("pattern fits");
    let m = SystemModel::new(c, cache);
    let plan = initial_plan(&m).expect("initial plan");
    let s = OptimizerSettings::default();
    let (load, _) = optimize_bits(&plan, &m, &s).expect("bit stage");
    (0..m.config.num_frames)
        .map(|n| {
            let want = bits_lp_oracle(&m, &plan, n, s.latency_margin_s);
            (load.frame_bits(n) - want).abs() / want
        })
        .fold(0.0, f64::max)
}

fn criterion_6() -> Outcome {
    let s = OptimizerSettings::default();
    let mut worst_ratio = f64::INFINITY;
    let mut errors = Vec::new();
    for seed in 0..TINY_INSTANCES {
        let c = tiny_instance(seed);
        let oracle = exhaustive_tiny_optimum(&c);
        match SystemModel::from_config(c).map(|m| alternating_optimize(&m, Scheme::JoC, &s)) {
            Ok(Ok((_, r))) => worst_ratio = worst_ratio.min(r.final_objective() / oracle),
            Ok(Err(e)) => errors.push(format!("seed {seed}: {e}")),
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }

    let mut worst_lp = 0.0f64;
    let mut long = default_scenario();
    long.num_frames = 2;
    long.resize_devices(2);
    long.frame_s = 1e6;
    long.leo_speed_mps = 1e-3;
    for pattern in [[1u8, 0], [0, 0], [1, 1], [0, 1]] {
        worst_lp = worst_lp.max(lp_gap(long.clone(), &pattern));
    }
    let mut short = default_scenario();
    short.num_frames = 5;
    short.resize_devices(3);
    short.uav_end_m = [600.0, 5400.0];
    for pattern in [[1u8, 0, 0], [0, 1, 1], [1, 1, 1]] {
        worst_lp = worst_lp.max(lp_gap(short.clone(), &pattern));
    }

    let pass = errors.is_empty() && worst_ratio >= TINY_RATIO && worst_lp <= LP_REL_TOL;
    let mut detail = format!(
        "worst AO / exhaustive ratio {worst_ratio:.4} over {TINY_INSTANCES} instances, \
         worst LP relative gap {worst_lp:.2e}"
    );
    if !errors.is_empty() {
        detail.push_str(&format!("; errors: {}", errors.join("; ")));
    }
    outcome(pass, detail)
}

fn criterion_7() -> Outcome {
    let c = default_scenario();

    // Hand evaluation from the tabulated inputs.
    let hand_coverage = 2.0 * (6371e3 + 600e3) * (15.8 * PI / 180.0) / 7500.0;
    let hand_power = 9.26e-4 * 16f64.powi(3) + 2250.0 / 16.0;
    let weights = [1.0, 2f64.powf(-0.6), 3f64.powf(-0.6)];
    let total: f64 = weights.iter().sum();
    let hand_zipf = weights.map(|w| w / total);

    let coverage = coverage_time(&c);
    let power = propulsion_power([16.0, 0.0], [0.0, 0.0], &c).unwrap_or(f64::NAN);
    let zipf: Vec<f64> = (1..=3).map(|f| zipf_popularity(f, 3, 0.6)).collect();
    let published = [0.4594, 0.3031, 0.2376];

    let coverage_ok = (coverage - hand_coverage).abs() <= COVERAGE_TOL_S && (coverage - 512.6).abs() <= COVERAGE_TOL_S;
    let power_ok = (power - hand_power).abs() <= POWER_TOL_W && (power - 144.42).abs() <= POWER_TOL_W;
    let zipf_ok = zipf
        .iter()
        .zip(&hand_zipf)
        .zip(&published)
        .all(|((z, h), p)| (z - h).abs() <= ZIPF_TOL && (z - p).abs() <= ZIPF_TOL);
    outcome(
        coverage_ok && power_ok && zipf_ok,
        format!(
            "coverage {coverage:.2} s (hand {hand_coverage:.2}), power {power:.4} W (hand {hand_power:.4}), \
             zipf ({:.4}, {:.4}, {:.4})",
            zipf[0], zipf[1], zipf[2]
        ),
    )
}

fn run_of<'a>(fig: &'a FigureData, label: &str) -> Option<&'a RunResult> {
    fig.series(label)
}

fn criterion_8(runner: &Runner, base: &ScenarioConfig, out: &std::path::Path) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    let mut figure = |tag: FigureTag| match reproduce_figure(tag, runner, base, &out.join(tag.name())) {
        Ok(f) => Some(f),
        Err(e) => {
            parts.push(format!("{}: {e}", tag.name()));
            None
        }
    };
    let fig7 = figure(FigureTag::Fig7);
    let fig8 = figure(FigureTag::Fig8);
    let fig9 = figure(FigureTag::Fig9);
    let fig10 = figure(FigureTag::Fig10);
    pass &= parts.is_empty();

    if let Some(f) = &fig7 {
        if let (Some(nc), Some(jc)) = (run_of(f, "jo_nc"), run_of(f, "jo_c_right_miss")) {
            let gap = jc.total_energy_j - nc.total_energy_j;
            let misses: Vec<usize> = jc.cache().misses().collect();
            let d_jc = mean_distance_to(&jc.plan.trajectory, &jc.model, &misses);
            let d_nc = mean_distance_to(&nc.plan.trajectory, &nc.model, &misses);
            let gap_ok = gap > 0.0 && (gap - GAP_TARGET_J).abs() <= GAP_BAND * GAP_TARGET_J;
            let bend_ok = d_jc < d_nc;
            pass &= gap_ok && bend_ok;
            parts.push(format!(
                "fig7 {} energy gap {gap:.2} J, {} distance to miss devices {d_jc:.0} m vs {d_nc:.0} m",
                if gap_ok { "ok" } else { "off" },
                if bend_ok { "ok" } else { "off" }
            ));
        }
    }
    if let Some(f) = &fig8 {
        if let Some(jc) = run_of(f, "jo_c_right_miss") {
            let window = overhead_window(jc.config().num_frames);
            match leo_share_in_window(&jc.plan, window.clone()) {
                Some(share) => {
                    let ok = share >= WINDOW_SHARE_FLOOR;
                    pass &= ok;
                    parts.push(format!(
                        "fig8 {} LEO share in frames {}..{} is {share:.3}",
                        if ok { "ok" } else { "off" },
                        window.start,
                        window.end
                    ));
                }
                None => {
                    pass = false;
                    parts.push("fig8 off JO-C makes no LEO decisions".into());
                }
            }
        }
    }
    if let Some(f) = &fig9 {
        let target = f.series("vmax50_amax5").map_or(f64::NAN, |r| r.energy_efficiency);
        let others = f
            .series
            .iter()
            .filter(|s| s.label != "vmax50_amax5")
            .map(|s| s.run.energy_efficiency)
            .fold(f64::NEG_INFINITY, f64::max);
        let ok = target >= others;
        pass &= ok;
        let values: Vec<String> = f
            .series
            .iter()
            .map(|s| format!("{} {:.9e}", s.label, s.run.energy_efficiency))
            .collect();
        let tie = if target == others { ", tied" } else { "" };
        parts.push(format!(
            "fig9 {} ({}){tie}",
            if ok { "ok" } else { "off" },
            values.join(", ")
        ));
    }
    if let Some(f) = &fig10 {
        if let (Some(o1), Some(o3)) = (run_of(f, "orbit1"), run_of(f, "orbit3")) {
            let all: Vec<usize> = (0..o1.model.num_devices()).collect();
            let d1 = mean_distance_to(&o1.plan.trajectory, &o1.model, &all);
            let d3 = mean_distance_to(&o3.plan.trajectory, &o3.model, &all);
            let ok = d3 < d1 - MIN_SHIFT_M;
            pass &= ok;
            parts.push(format!(
                "fig10 {} distance to devices {d3:.3} m at the edge orbit vs {d1:.3} m",
                if ok { "ok" } else { "off" }
            ));
        }
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9(first: &RunResult, base: &ScenarioConfig) -> Outcome {
    let runner = Runner::new(OptimizerSettings::default());
    match runner.run(base, Scheme::JoC) {
        Ok(second) => {
            let (a, b) = (trace_bytes(first), trace_bytes(&second));
            outcome(a == b, format!("trace files of {} and {} bytes, identical {}", a.len(), b.len(), a == b))
        }
        Err(e) => outcome(false, format!("second run failed: {e}")),
    }
}

fn main() {
    let base = default_scenario();
    let runner = Runner::new(OptimizerSettings::default());
    let out = tempfile::tempdir().expect("temp dir");
    let mut results = Vec::new();

    let start = Instant::now();
    let first = runner.run(&base, Scheme::JoC);
    let wall = start.elapsed().as_secs_f64();
    match &first {
        Ok(run) => results.push((1, criterion_1(run, wall))),
        Err(e) => results.push((1, outcome(false, format!("run failed: {e}")))),
    }
    report(1, &results[0].1);

    let mut record = |id: usize, o: Outcome| {
        report(id, &o);
        results.push((id, o));
    };
    record(2, criterion_2(&runner, &base));
    record(3, criterion_3());
    record(4, criterion_4());
    match &first {
        Ok(run) => record(5, criterion_5(run)),
        Err(_) => record(5, outcome(false, "no run to audit".into())),
    }
    record(6, criterion_6());
    record(7, criterion_7());
    record(8, criterion_8(&runner, &base, out.path()));
    match &first {
        Ok(run) => record(9, criterion_9(run, &base)),
        Err(_) => record(9, outcome(false, "no first run".into())),
    }

    let passed = results.iter().filter(|(_, o)| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    let strict = std::env::var("SAGIN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
