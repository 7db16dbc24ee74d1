//! Optimizer stages checked against brute-force oracles.

mod common;

use common::*;
use sagin_core::caching::scenario_indicators;
use sagin_core::energy::frame_feasible;
use sagin_core::optimizer::offloading::entry_residual;
use sagin_core::optimizer::{initial_plan, optimize_bits, optimize_offloading, optimize_trajectory};
use sagin_core::{alternating_optimize, default_scenario, OptimizerSettings, Scheme, SystemModel};

fn model_with(c: sagin_core::ScenarioConfig, pattern: &[u8]) -> SystemModel {
    let cache = scenario_indicators(pattern, &c).unwrap();
    SystemModel::new(c, cache)
}

#[test]
fn bit_lp_matches_vertex_enumeration_with_long_frames() {
    let mut c = default_scenario();
    c.num_frames = 2;
    c.resize_devices(2);
    c.frame_s = 1e6;
    c.leo_speed_mps = 1e-3;
    for pattern in [[1u8, 0], [0, 0], [1, 1]] {
        let m = model_with(c.clone(), &pattern);
        let plan = initial_plan(&m).unwrap();
        let s = OptimizerSettings::default();
        let (load, _) = optimize_bits(&plan, &m, &s).unwrap();
        for n in 0..2 {
            let want = bits_lp_oracle(&m, &plan, n, s.latency_margin_s);
            let got = load.frame_bits(n);
            assert!((got - want).abs() <= 1e-7 * want, "{pattern:?} frame {n}: {got} vs {want}");
            // The frame length is the only binding limit.
            let chk = frame_feasible(n, &plan.z_column(n), plan.trajectory.q[n], &load, &m);
            assert!(chk.min_residual().abs() < 1e-3, "{}", chk.min_residual());
        }
    }
}

#[test]
fn bit_lp_matches_vertex_enumeration_at_default_frames() {
    let mut c = default_scenario();
    c.num_frames = 5;
    c.resize_devices(3);
    c.uav_end_m = [600.0, 5400.0];
    for pattern in [[1u8, 0, 0], [0, 1, 1]] {
        let m = model_with(c.clone(), &pattern);
        let plan = initial_plan(&m).unwrap();
        let s = OptimizerSettings::default();
        let (load, _) = optimize_bits(&plan, &m, &s).unwrap();
        for n in 0..5 {
            let want = bits_lp_oracle(&m, &plan, n, s.latency_margin_s);
            let got = load.frame_bits(n);
            assert!((got - want).abs() <= 1e-7 * want, "{pattern:?} frame {n}: {got} vs {want}");
        }
    }
}

#[test]
fn offloading_matches_all_sixteen_assignments() {
    for seed in 0..6 {
        let mut c = default_scenario();
        c.num_frames = 2;
        c.resize_devices(2);
        c.randomize_devices(seed);
        c.uav_end_m = [400.0, 5200.0];
        if !sagin_core::scenario::validate(&c).is_ok() {
            continue;
        }
        let m = SystemModel::from_config(c).unwrap();
        let mut plan = initial_plan(&m).unwrap();
        let s = OptimizerSettings::default();
        plan.load = optimize_bits(&plan, &m, &s).unwrap().0;
        let res = optimize_offloading(&plan, &m, &s).unwrap();

        let min_residual = |z: &[Vec<f64>]| {
            (0..2)
                .map(|n| {
                    let col: Vec<f64> = (0..2).map(|k| z[k][n]).collect();
                    frame_feasible(n, &col, plan.trajectory.q[n], &plan.load, &m).min_residual()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let mut best = f64::NEG_INFINITY;
        for code in 0..16u32 {
            let z: Vec<Vec<f64>> = (0..2)
                .map(|k| (0..2).map(|n| f64::from((code >> (2 * k + n)) & 1)).collect())
                .collect();
            best = best.max(min_residual(&z));
        }
        let got = min_residual(&res.z);
        assert!((got - best).abs() <= 1e-12 * best.abs().max(1.0), "seed {seed}: {got} vs {best}");
        for k in 0..2 {
            for n in 0..2 {
                let r = entry_residual(k, n, res.z[k][n], &plan, &m);
                assert!(r >= entry_residual(k, n, 1.0 - res.z[k][n], &plan, &m) - 1e-12);
            }
        }
    }
}

#[test]
fn trajectory_stage_matches_grid_search_for_one_device() {
    for (end, device) in [([400.0, 5000.0], [200.0, 5300.0]), ([600.0, 5300.0], [100.0, 4800.0])] {
        let mut c = default_scenario();
        c.num_frames = 3;
        c.resize_devices(1);
        c.uav_end_m = end;
        c.devices[0].x_m = device[0];
        c.devices[0].y_m = device[1];
        let m = model_with(c, &[1]);
        let mut plan = initial_plan(&m).unwrap();
        let s = OptimizerSettings::default();
        plan.load = optimize_bits(&plan, &m, &s).unwrap().0;
        let got = optimize_trajectory(&plan, &m, &s).unwrap().audit.objective_out;
        let want = trajectory_search_3_frames(&plan, &m, 300.0);
        let rel = (got - want).abs() / want;
        assert!(rel <= 0.02, "end {end:?}: optimizer {got:.6e}, grid {want:.6e}, rel {rel:.4}");
    }
}

#[test]
fn tiny_instances_reach_exhaustive_optimum() {
    let s = OptimizerSettings::default();
    for seed in 0..3 {
        let c = tiny_instance(seed);
        let oracle = exhaustive_tiny_optimum(&c);
        let m = SystemModel::from_config(c).unwrap();
        let (_, report) = alternating_optimize(&m, Scheme::JoC, &s).unwrap();
        let got = report.final_objective();
        assert!(got >= 0.95 * oracle, "seed {seed}: AO {got:.6e} vs oracle {oracle:.6e}");
    }
}
