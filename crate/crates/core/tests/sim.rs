mod common;

use std::f64::consts::PI;

use common::{eigenmode_state, fundamental_phase, leading_bin};
use filmctl::sim::{run_with, StepperOptions};
use filmctl::{run, PhysicalParams, RunConfig, Strategy, Verdict};

fn uncontrolled(re: f64, n: usize, t_end: f64) -> RunConfig {
    let mut c = RunConfig::new(PhysicalParams::reference(re));
    c.n_nodes = n;
    c.strategy = None;
    c.burn_in_time = 0.0;
    c.control_time = t_end;
    c
}

#[test]
fn small_eigenmode_grows_at_its_eigenvalue_rate() {
    let mut cfg = uncontrolled(11.29, 64, 1.0);
    cfg.stepper = StepperOptions {
        rtol: 1e-8,
        atol: 1e-14,
        ..StepperOptions::default()
    };
    let sys = cfg.linear_system().unwrap();
    let bin = leading_bin(&sys);
    let (state, lambda) = eigenmode_state(&sys, bin, 1e-6);
    // stay well inside the linear regime
    cfg.control_time = (6.0 / lambda.re).min(60.0);
    let out = run_with(&cfg, None, state).unwrap();
    let fit = out.record.decay.unwrap();
    let growth = -fit.rate;
    assert!(fit.r_squared > 0.9999);
    assert!((growth - lambda.re).abs() < 0.01 * lambda.re, "growth {growth} vs {}", lambda.re);
}

#[test]
fn tighter_tolerances_converge() {
    let mut cfg = uncontrolled(11.29, 64, 40.0);
    cfg.perturbation.noise = 0.0;
    cfg.snapshot_times = vec![40.0];
    let h_at = |rtol: f64| {
        let mut c = cfg.clone();
        c.stepper.rtol = rtol;
        c.stepper.atol = rtol * 1e-2;
        run(&c).unwrap().snapshots.remove(0).h
    };
    let (h5, h6, h7) = (h_at(1e-5), h_at(1e-6), h_at(1e-7));
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    // each run against one with a ten times tighter tolerance
    let (e5, e6) = (dist(&h5, &h6), dist(&h6, &h7));
    assert!(e6 <= e5 / 2.0, "errors {e5} and {e6}");
    assert!(e6 < 1e-3);
}

#[test]
fn saturated_wave_travels_at_constant_speed() {
    let mut cfg = uncontrolled(10.0, 64, 330.0);
    cfg.snapshot_times = (0..=15).map(|k| 300.0 + 2.0 * k as f64).collect();
    let out = run(&cfg).unwrap();
    assert_ne!(out.record.verdict, Verdict::BlowUp);
    let length = cfg.params.length;
    let speeds: Vec<f64> = out
        .snapshots
        .windows(2)
        .map(|w| {
            let dphase = (fundamental_phase(&w[0].h) - fundamental_phase(&w[1].h)).rem_euclid(2.0 * PI);
            dphase / (2.0 * PI) * length / (w[1].t - w[0].t)
        })
        .collect();
    let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
    assert!(mean > 1.0, "waves must travel downstream, speed {mean}");
    for c in &speeds {
        assert!((c - mean).abs() < 0.02 * mean, "speeds {speeds:?}");
    }
}

#[test]
fn mass_balance_tracks_injection() {
    for strategy in [Strategy::FullState, Strategy::Luenberger] {
        let mut cfg = RunConfig::new(PhysicalParams::reference(5.0));
        cfg.n_nodes = 64;
        cfg.strategy = Some(strategy);
        cfg.burn_in_time = 50.0;
        cfg.control_time = 30.0;
        let out = run(&cfg).unwrap();
        assert!(out.record.mass_defect < 10.0 * cfg.stepper.atol, "{strategy}: {}", out.record.mass_defect);
    }
}

#[test]
fn full_state_control_stabilises_a_moderate_film() {
    let mut cfg = RunConfig::new(PhysicalParams::reference(5.0));
    cfg.n_nodes = 64;
    cfg.strategy = Some(Strategy::FullState);
    cfg.burn_in_time = 100.0;
    cfg.control_time = 60.0;
    let out = run(&cfg).unwrap();
    let r = &out.record;
    assert_eq!(r.verdict, Verdict::Stabilised, "final norm {}", r.final_norm);
    assert!(r.costs.windows(2).all(|w| w[1] >= w[0]));
    assert!(r.decay.unwrap().rate > 0.0);
}

#[test]
fn runs_are_deterministic_and_seeded() {
    let mut cfg = RunConfig::new(PhysicalParams::reference(11.29));
    cfg.n_nodes = 32;
    cfg.strategy = Some(Strategy::FullState);
    cfg.burn_in_time = 5.0;
    cfg.control_time = 5.0;
    let a = run(&cfg).unwrap().record;
    let b = run(&cfg).unwrap().record;
    assert_eq!(a.norms, b.norms);
    assert_eq!(a.costs, b.costs);
    cfg.seed = 1;
    let c = run(&cfg).unwrap().record;
    assert_ne!(a.norms, c.norms);
}

#[test]
fn shifted_setup_shifts_the_trajectory() {
    let mut cfg = RunConfig::new(PhysicalParams::reference(11.29));
    cfg.n_nodes = 64;
    cfg.strategy = Some(Strategy::Luenberger);
    cfg.burn_in_time = 20.0;
    cfg.control_time = 20.0;
    cfg.snapshot_times = vec![-10.0, 10.0, 20.0];
    let base = run(&cfg).unwrap();
    cfg.shift_nodes = 1;
    let shifted = run(&cfg).unwrap();
    for (s0, s1) in base.snapshots.iter().zip(&shifted.snapshots) {
        let n = s0.h.len();
        for j in 0..n {
            assert!((s1.h[(j + 1) % n] - s0.h[j]).abs() < 1e-9, "t = {}", s0.t);
        }
    }
}

#[test]
fn blow_up_is_reported() {
    let mut cfg = uncontrolled(11.29, 32, 50.0);
    cfg.h_max = 1.05;
    let out = run(&cfg).unwrap();
    assert_eq!(out.record.verdict, Verdict::BlowUp);
    assert!(out.record.message.is_some());
}
