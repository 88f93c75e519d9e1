//! Whole-trajectory properties of the closed loop.

use nldamp_core::analysis::{
    analyze, attractor_slope_error, fit_log_decay, overshoot_count, saturation_episodes,
    saturation_exit_time, AnalysisOptions,
};
use nldamp_core::integrator::{simulate, simulate_saturated_closed_form};
use nldamp_core::{
    ControllerSpec, DecayModel, IntegratorKind, Saturation, SimulationConfig, State, Trajectory,
};

fn start(x1: f64, x2: f64) -> State {
    State::new(x1, x2).unwrap()
}

fn run(spec: ControllerSpec, initial: State, t_end: f64) -> Trajectory {
    simulate(&spec, &SimulationConfig::new(initial, t_end).unwrap()).unwrap()
}

/// Least-squares line through `log10((1 + 10 t) e^{-10 t})` sampled on the
/// same grid as the simulation, evaluated directly from the closed form.
fn closed_form_log_slope(window: (f64, f64), step: f64) -> f64 {
    let ts: Vec<f64> = (0..)
        .map(|i| i as f64 * step)
        .skip_while(|&t| t < window.0 - 1e-12)
        .take_while(|&t| t <= window.1 + 1e-12)
        .collect();
    let ys: Vec<f64> = ts
        .iter()
        .map(|&t| ((1.0 + 10.0 * t) * (-10.0 * t).exp()).log10())
        .collect();
    let n = ts.len() as f64;
    let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    sxy / sxx
}

#[test]
fn conservative_loop_preserves_energy() {
    let spec = ControllerSpec::undamped(1.0).unwrap();
    let mut cfg = SimulationConfig::new(start(1.0, 0.0), 10.0).unwrap();
    cfg.rel_tol = 1e-12;
    cfg.abs_tol = 1e-12;
    let traj = simulate(&spec, &cfg).unwrap();
    let v0 = traj.samples[0].lyapunov;
    for s in &traj.samples {
        assert!(
            (s.lyapunov - v0).abs() / v0 <= 1e-9,
            "t={} V={}",
            s.t,
            s.lyapunov
        );
    }
}

#[test]
fn critical_damping_matches_closed_form() {
    let spec = ControllerSpec::linear(100.0, 20.0).unwrap();
    let traj = run(spec, start(1.0, 0.0), 2.0);
    for s in &traj.samples {
        let exact = (1.0 + 10.0 * s.t) * (-10.0 * s.t).exp();
        assert!((s.state.x1 - exact).abs() <= 1e-8);
    }
    assert_eq!(overshoot_count(&traj), 0);
}

#[test]
fn critical_damping_general_initial_state() {
    let k: f64 = 100.0;
    let lambda = k.sqrt();
    let (x10, x20) = (-0.4, 3.0);
    let spec = ControllerSpec::linear(k, 2.0 * lambda).unwrap();
    let traj = run(spec, start(x10, x20), 2.0);
    for s in &traj.samples {
        let exact = (x10 + (x20 + lambda * x10) * s.t) * (-lambda * s.t).exp();
        assert!((s.state.x1 - exact).abs() <= 1e-8);
    }
}

#[test]
fn nonlinear_law_has_no_overshoot_and_monotone_energy() {
    let traj = run(
        ControllerSpec::nonlinear(100.0).unwrap(),
        start(1.0, 0.0),
        2.0,
    );
    assert_eq!(overshoot_count(&traj), 0);
    assert!(traj.samples.iter().all(|s| s.state.x1 > 0.0));
    for w in traj.samples.windows(2) {
        assert!(w[1].lyapunov <= w[0].lyapunov + 1e-9);
        if w[0].state.x2 != 0.0 {
            assert!(w[1].lyapunov < w[0].lyapunov);
        }
    }
}

#[test]
fn nonlinear_output_follows_gaussian_decay() {
    // in quadrant IV the slope x2/x1 decreases at rate k, so x1 = exp(-k t^2 / 2)
    let k = 100.0;
    let traj = run(ControllerSpec::nonlinear(k).unwrap(), start(1.0, 0.0), 2.0);
    for s in traj.samples.iter().filter(|s| s.t <= 0.4) {
        let exact = (-0.5 * k * s.t * s.t).exp();
        assert!(
            (s.state.x1 - exact).abs() <= 1e-9 + 1e-7 * exact,
            "t={}",
            s.t
        );
    }
}

#[test]
fn decay_fits_distinguish_the_laws() {
    let nl = run(
        ControllerSpec::nonlinear(100.0).unwrap(),
        start(1.0, 0.0),
        2.0,
    );
    let fit = fit_log_decay(&nl, (0.05, 0.8)).unwrap();
    assert_eq!(fit.model, DecayModel::Quadratic);
    assert!(fit.r_squared > 0.99);
    assert!(fit.coefficients[2] < 0.0);
    // log10 exp(-50 t^2) = -(50 / ln 10) t^2
    let expected = -50.0 / std::f64::consts::LN_10;
    assert!((fit.coefficients[2] - expected).abs() < 1e-3 * expected.abs());

    let lin = run(
        ControllerSpec::linear(100.0, 20.0).unwrap(),
        start(1.0, 0.0),
        2.0,
    );
    let fit = fit_log_decay(&lin, (0.5, 1.5)).unwrap();
    assert_eq!(fit.model, DecayModel::Linear);
    let oracle = closed_form_log_slope((0.5, 1.5), 1e-3);
    assert!(
        (fit.coefficients[1] - oracle).abs() < 1e-6,
        "{} vs {oracle}",
        fit.coefficients[1]
    );
}

#[test]
fn solvers_agree_on_nonlinear_scenario() {
    let spec = ControllerSpec::nonlinear(100.0).unwrap();
    let adaptive = run(spec, start(1.0, 0.0), 2.0);
    let mut cfg = SimulationConfig::new(start(1.0, 0.0), 2.0).unwrap();
    cfg.integrator = IntegratorKind::Rk4;
    let fixed = simulate(&spec, &cfg).unwrap();
    // the runs stop below v_stop at different instants; compare the common grid
    let mut compared = 0;
    for a in &adaptive.samples {
        if let Some(b) = fixed.samples.iter().find(|b| b.t == a.t) {
            assert!((a.state.x1 - b.state.x1).abs() <= 1e-6);
            assert!((a.state.x2 - b.state.x2).abs() <= 1e-6);
            compared += 1;
        }
    }
    assert!(compared > 700);
}

#[test]
fn gain_scaling_collapses_trajectories() {
    let base_interval = 1e-3;
    let reference = {
        let mut cfg = SimulationConfig::new(start(1.0, 0.0), 20.0).unwrap();
        cfg.sample_interval = base_interval;
        simulate(&ControllerSpec::nonlinear(1.0).unwrap(), &cfg).unwrap()
    };
    for k in [10.0f64, 1000.0] {
        let root_k = k.sqrt();
        let mut cfg = SimulationConfig::new(start(1.0, 0.0), 2.0).unwrap();
        cfg.sample_interval = base_interval / root_k;
        let traj = simulate(&ControllerSpec::nonlinear(k).unwrap(), &cfg).unwrap();
        let grid = |s: &&nldamp_core::Sample| {
            (s.t / cfg.sample_interval - (s.t / cfg.sample_interval).round()).abs() < 1e-6
        };
        let scaled: Vec<_> = traj.samples.iter().filter(grid).collect();
        let common = scaled.len().min(reference.samples.len());
        assert!(common > 100);
        for (s, r) in scaled.iter().zip(&reference.samples).take(common) {
            assert!((s.t * root_k - r.t).abs() < 1e-9);
            assert!((s.state.x1 - r.state.x1).abs() <= 1e-6);
            assert!((s.state.x2 / root_k - r.state.x2).abs() <= 1e-6);
        }
    }
}

#[test]
fn saturated_runs_overshoot_at_most_once_and_recover() {
    let s_max = 25.0;
    for k in [50.0, 100.0, 150.0, 200.0] {
        let spec = ControllerSpec::nonlinear(k)
            .unwrap()
            .with_saturation(Saturation::Bounded(s_max))
            .unwrap();
        let traj = run(spec, start(1.0, 0.0), 2.0);
        let count = overshoot_count(&traj);
        assert!(count <= 1, "k={k}: {count} overshoots");
        if k == 200.0 {
            assert_eq!(count, 1);
        }
        assert!(!traj.final_sample().unwrap().saturated);
        assert!(saturation_exit_time(&traj).is_some());
        for ep in saturation_episodes(&traj) {
            let exit = ep.exit_time.expect("episode ends");
            assert!(
                exit <= ep.predicted_exit_bound(s_max) + 1e-9,
                "k={k}: {ep:?}"
            );
        }
        for s in &traj.samples {
            assert!(s.v.abs() <= s_max);
        }
    }
}

#[test]
fn saturated_segments_follow_parabolas() {
    let s_max = 25.0;
    for k in [50.0, 200.0] {
        let spec = ControllerSpec::nonlinear(k)
            .unwrap()
            .with_saturation(Saturation::Bounded(s_max))
            .unwrap();
        let traj = run(spec, start(1.0, 0.0), 2.0);
        for ep in saturation_episodes(&traj) {
            let exit = ep.exit_time.unwrap();
            for s in traj
                .samples
                .iter()
                .filter(|s| s.t >= ep.start_time && s.t < exit)
            {
                let cf = simulate_saturated_closed_form(
                    ep.start_state.x1,
                    ep.start_state.x2,
                    s_max,
                    ep.sign,
                    s.t - ep.start_time,
                );
                assert!((s.state.x1 - cf.x1).abs() <= 1e-10, "k={k} t={}", s.t);
                assert!((s.state.x2 - cf.x2).abs() <= 1e-10, "k={k} t={}", s.t);
            }
        }
    }
}

#[test]
fn unsaturated_comparison_case_has_no_overshoot() {
    let traj = run(
        ControllerSpec::nonlinear(200.0).unwrap(),
        start(1.0, 0.0),
        2.0,
    );
    assert_eq!(overshoot_count(&traj), 0);
    assert_eq!(saturation_exit_time(&traj), None);
}

#[test]
fn start_on_velocity_axis_integrates() {
    let spec = ControllerSpec::nonlinear(100.0).unwrap();
    for x2 in [1.0, -1.0, 2.0] {
        let traj = run(spec, start(0.0, x2), 2.0);
        assert_eq!(overshoot_count(&traj), 0);
        assert!(traj.samples.iter().all(|s| s.state.is_finite()));
    }
}

#[test]
fn negated_start_mirrors_trajectory() {
    let spec = ControllerSpec::nonlinear(100.0).unwrap();
    let a = run(spec, start(1.0, 0.0), 2.0);
    let b = run(spec, start(-1.0, 0.0), 2.0);
    assert_eq!(a.samples.len(), b.samples.len());
    for (p, q) in a.samples.iter().zip(&b.samples) {
        assert_eq!(p.t, q.t);
        assert!((p.state.x1 + q.state.x1).abs() <= 1e-9);
        assert!((p.state.x2 + q.state.x2).abs() <= 1e-9);
    }
}

#[test]
fn analyze_reports_expected_metrics() {
    let traj = run(
        ControllerSpec::nonlinear(100.0).unwrap(),
        start(1.0, 0.0),
        2.0,
    );
    let report = analyze(&traj, &AnalysisOptions::default()).unwrap();
    assert_eq!(report.overshoot_count, 0);
    assert!(report.settling_time.unwrap() < 0.7);
    assert!(report.final_v < 1e-20);
    assert!(report.saturation_exit_time.is_none());
    assert_eq!(report.decay_fit.unwrap().model, DecayModel::Quadratic);
    // slope ratio x2/x1 = -k t, far from -sqrt(k) in the slope window
    let err = attractor_slope_error(&traj, (1e-6, 1e-4)).unwrap();
    assert!(err > 3.0 && err < 4.5, "{err}");
}
