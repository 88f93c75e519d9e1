//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p nldamp-cli --test acceptance`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nldamp_cli::csv::{read_blocks, read_trajectory, write_block, write_trajectory};
use nldamp_core::analysis::{
    attractor_slope_error, classify_passivity, finite_time_condition, finite_time_region,
    fit_log_decay, overshoot_count, saturation_episodes, saturation_exit_time, GridSpec,
    PassivityClass,
};
use nldamp_core::integrator::simulate;
use nldamp_core::{
    model::DEFAULT_EPSILON_REG, ControllerSpec, DecayModel, IntegratorKind, Saturation,
    SimulationConfig, State, Trajectory,
};
use num_rational::BigRational;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn state(x1: f64, x2: f64) -> State {
    State::new(x1, x2).unwrap()
}

fn run(spec: ControllerSpec, initial: State, t_end: f64) -> Trajectory {
    simulate(&spec, &SimulationConfig::new(initial, t_end).unwrap()).unwrap()
}

fn nonlinear(k: f64) -> ControllerSpec {
    ControllerSpec::nonlinear(k).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn critical_damping_oracle() -> Outcome {
    let traj = run(
        ControllerSpec::linear(100.0, 20.0).unwrap(),
        state(1.0, 0.0),
        2.0,
    );
    let err = traj
        .samples
        .iter()
        .map(|s| (s.state.x1 - (1.0 + 10.0 * s.t) * (-10.0 * s.t).exp()).abs())
        .fold(0.0, f64::max);
    let covered = traj.samples.last().unwrap().t;
    check(
        err <= 1e-8 && covered == 2.0,
        format!("max |x1 - (1+10t)e^-10t| = {err:.3e} over [0, {covered}] (tol 1e-8)"),
    )
}

fn conservative_plant() -> Outcome {
    let mut cfg = SimulationConfig::new(state(1.0, 0.0), 10.0).unwrap();
    cfg.rel_tol = 1e-12;
    cfg.abs_tol = 1e-12;
    let traj = simulate(&ControllerSpec::undamped(1.0).unwrap(), &cfg).unwrap();
    let v0 = traj.samples[0].lyapunov;
    let drift = traj
        .samples
        .iter()
        .map(|s| (s.lyapunov - v0).abs() / v0)
        .fold(0.0, f64::max);
    check(
        drift <= 1e-9,
        format!("max relative drift of V = {drift:.3e} on [0, 10] (tol 1e-9)"),
    )
}

const GAINS: [f64; 6] = [10.0, 50.0, 100.0, 150.0, 200.0, 1000.0];

fn gain_runs() -> Vec<Trajectory> {
    GAINS
        .iter()
        .map(|&k| run(nonlinear(k), state(1.0, 0.0), 2.0))
        .collect()
}

fn no_overshoot() -> Outcome {
    let mut worst = Vec::new();
    for traj in gain_runs() {
        let count = overshoot_count(&traj);
        let min_x1 = traj
            .samples
            .iter()
            .map(|s| s.state.x1)
            .fold(f64::INFINITY, f64::min);
        if count != 0 || min_x1 <= 0.0 {
            worst.push(format!(
                "k={} overshoots={count} min x1={min_x1:e}",
                traj.controller.k
            ));
        }
    }
    check(
        worst.is_empty(),
        if worst.is_empty() {
            format!("k in {GAINS:?}: no overshoot, x1 > 0 at every sample")
        } else {
            worst.join("; ")
        },
    )
}

fn lyapunov_decay() -> Outcome {
    let mut max_rise: f64 = f64::NEG_INFINITY;
    for traj in gain_runs() {
        for w in traj.samples.windows(2) {
            max_rise = max_rise.max(w[1].lyapunov - w[0].lyapunov);
        }
    }
    check(
        max_rise <= 1e-9,
        format!("largest increase of V between consecutive samples = {max_rise:.3e} (slack 1e-9)"),
    )
}

fn faster_convergence() -> Outcome {
    let nl = run(nonlinear(100.0), state(1.0, 0.0), 2.0);
    let lin = run(
        ControllerSpec::linear(100.0, 20.0).unwrap(),
        state(1.0, 0.0),
        2.0,
    );
    // the nonlinear run stops once V < v_stop, before t = 1
    let at = |t: &Trajectory| {
        t.samples
            .iter()
            .rev()
            .find(|s| s.t <= 1.0)
            .unwrap()
            .state
            .x1
            .abs()
    };
    let (x_nl, x_lin) = (at(&nl), at(&lin));
    let nl_fit = fit_log_decay(&nl, (0.05, 0.8)).unwrap();
    let lin_fit = fit_log_decay(&lin, (0.5, 1.5)).unwrap();
    let target = -10.0 / std::f64::consts::LN_10;
    let slope = lin_fit.linear.coefficients[1];
    let slope_err = (slope - target).abs() / target.abs();

    let parts = [
        (
            x_nl < x_lin,
            format!("|x1_nl(1)|={x_nl:.3e} < |x1_lin(1)|={x_lin:.3e}"),
        ),
        (
            nl_fit.model == DecayModel::Quadratic
                && nl_fit.quadratic.r_squared > 0.99
                && nl_fit.quadratic.coefficients[2] < 0.0,
            format!(
                "nonlinear fit {:?} r2={:.6} c2={:.4}",
                nl_fit.model, nl_fit.quadratic.r_squared, nl_fit.quadratic.coefficients[2]
            ),
        ),
        (
            lin_fit.model == DecayModel::Linear,
            format!("linear fit {:?}", lin_fit.model),
        ),
        (
            slope_err <= 0.05,
            format!(
                "linear slope {slope:.4} vs {target:.4} ({:.1}% off, tol 5%)",
                100.0 * slope_err
            ),
        ),
    ];
    let ok = parts.iter().all(|(ok, _)| *ok);
    let detail = parts
        .iter()
        .map(|(ok, d)| format!("{}{d}", if *ok { "" } else { "[x] " }))
        .collect::<Vec<_>>()
        .join("; ");
    check(ok, detail)
}

fn attractor_slope() -> Outcome {
    let traj = run(nonlinear(100.0), state(1.0, 0.0), 2.0);
    match attractor_slope_error(&traj, (1e-6, 1e-4)) {
        Some(err) => check(
            err <= 0.05,
            format!("median |x2/x1 + 10|/10 over |x1| in [1e-6, 1e-4] = {err:.4} (tol 0.05)"),
        ),
        None => Err("no samples with |x1| in [1e-6, 1e-4]".into()),
    }
}

fn k_scaling() -> Outcome {
    let base = SimulationConfig::new(state(1.0, 0.0), 2.0).unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for k in [10.0, 1000.0] {
        let root = f64::sqrt(k);
        let cfg = SimulationConfig {
            sample_interval: base.sample_interval / root,
            ..base
        };
        let scaled = simulate(&nonlinear(k), &cfg).unwrap();
        let ref_cfg = SimulationConfig {
            t_end: base.t_end * root,
            ..base
        };
        let reference = simulate(&nonlinear(1.0), &ref_cfg).unwrap();
        let index = |t: f64, h: f64| {
            let r = t / h;
            ((r - r.round()).abs() < 1e-6).then(|| r.round() as usize)
        };
        let by_index: BTreeMap<usize, State> = reference
            .samples
            .iter()
            .filter_map(|s| index(s.t, ref_cfg.sample_interval).map(|i| (i, s.state)))
            .collect();
        let mut dev: f64 = 0.0;
        let mut compared = 0;
        for s in &scaled.samples {
            let Some(r) = index(s.t, cfg.sample_interval).and_then(|i| by_index.get(&i)) else {
                continue;
            };
            dev = dev
                .max((s.state.x1 - r.x1).abs())
                .max((s.state.x2 / root - r.x2).abs());
            compared += 1;
        }
        ok &= dev <= 1e-6 && compared > 100;
        details.push(format!(
            "k={k}: max deviation {dev:.3e} over {compared} instants"
        ));
    }
    check(ok, format!("{} (tol 1e-6)", details.join("; ")))
}

fn saturation_behavior() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for k in [50.0, 100.0, 150.0, 200.0] {
        let spec = nonlinear(k)
            .with_saturation(Saturation::Bounded(25.0))
            .unwrap();
        let traj = run(spec, state(1.0, 0.0), 2.0);
        let count = overshoot_count(&traj);
        let count_ok = if k == 200.0 { count == 1 } else { count <= 1 };
        let exit = saturation_exit_time(&traj);
        let episodes = saturation_episodes(&traj);
        let margin = episodes
            .iter()
            .map(|ep| {
                ep.exit_time
                    .map_or(f64::INFINITY, |x| x - ep.predicted_exit_bound(25.0))
            })
            .fold(f64::NEG_INFINITY, f64::max);
        ok &= count_ok && exit.is_some() && margin <= 1e-9;
        details.push(format!(
            "k={k}: overshoots={count} t*={} episodes={} max(exit - bound)={margin:.3e}",
            exit.map_or("none".into(), |t| format!("{t:.4}")),
            episodes.len()
        ));
    }
    check(ok, details.join("; "))
}

fn passivity_equivalence() -> Outcome {
    let grid = GridSpec::square(2.0, 100).unwrap();
    let mut mismatches = 0;
    let mut quadrant_failures = 0;
    let mut cells = 0;
    for (_, _, s) in grid.centers() {
        if s.x1 == 0.0 || s.x2 == 0.0 {
            continue;
        }
        cells += 1;
        // u y >= V' with u the damping input and y = x1, in exact arithmetic
        let exact = |v: f64| BigRational::from_float(v).unwrap();
        let sq = exact(s.x2) * exact(s.x2);
        let power = -&sq * exact(s.x2.signum() * s.x1.signum());
        let rate = -&sq * exact(s.x2.abs()) / exact(s.x1.abs());
        let direct = match power.cmp(&rate) {
            Ordering::Greater => PassivityClass::Passive,
            Ordering::Less => PassivityClass::NonPassive,
            Ordering::Equal => PassivityClass::Boundary,
        };
        let class = classify_passivity(s).unwrap();
        mismatches += usize::from(class != direct);
        if s.x1 * s.x2 < 0.0 && class != PassivityClass::Passive {
            quadrant_failures += 1;
        }
    }
    check(
        mismatches == 0 && quadrant_failures == 0 && cells == 10_000,
        format!("{cells} cells: {mismatches} mismatches, {quadrant_failures} non-passive cells in quadrants II/IV"),
    )
}

fn finite_time_region_shape() -> Outcome {
    let grid = GridSpec::square(2.0, 201).unwrap();
    let region = finite_time_region(&grid, 100.0, 1.0, DEFAULT_EPSILON_REG).unwrap();
    let n = grid.x1_cells;
    let holding = region.mask.cells.iter().filter(|&&b| b).count();
    let axis_clear = region
        .mask
        .iter()
        .filter(|(s, _)| s.x2 == 0.0)
        .all(|(_, &b)| !b);
    let symmetric = (0..n)
        .all(|i| (0..n).all(|j| region.mask.get(i, j) == region.mask.get(n - 1 - i, n - 1 - j)));
    let inside = finite_time_condition(state(0.01, 1.0), 100.0, 1.0, DEFAULT_EPSILON_REG);
    let outside = !finite_time_condition(state(1.0, 0.1), 100.0, 1.0, DEFAULT_EPSILON_REG);
    check(
        holding > 0 && axis_clear && symmetric && inside && outside,
        format!(
            "{holding} of {} cells hold; x1-axis excluded={axis_clear}; symmetric={symmetric}; \
             (0.01,1) included={inside}; (1,0.1) excluded={outside}",
            grid.len()
        ),
    )
}

fn solver_cross_check() -> Outcome {
    let adaptive = run(nonlinear(100.0), state(1.0, 0.0), 2.0);
    let mut cfg = SimulationConfig::new(state(1.0, 0.0), 2.0).unwrap();
    cfg.integrator = IntegratorKind::Rk4;
    cfg.dt = 1e-5;
    let fixed = simulate(&nonlinear(100.0), &cfg).unwrap();
    let by_t: BTreeMap<u64, State> = fixed
        .samples
        .iter()
        .map(|s| (s.t.to_bits(), s.state))
        .collect();
    let mut dev: f64 = 0.0;
    let mut compared = 0;
    for s in &adaptive.samples {
        if let Some(r) = by_t.get(&s.t.to_bits()) {
            dev = dev
                .max((s.state.x1 - r.x1).abs())
                .max((s.state.x2 - r.x2).abs());
            compared += 1;
        }
    }
    check(
        dev <= 1e-6 && compared > 500,
        format!("max |RK4 - RK45| = {dev:.3e} over {compared} common instants (tol 1e-6)"),
    )
}

const COMMANDS: [&str; 7] = [
    "simulate",
    "compare",
    "sweep-k",
    "saturation-study",
    "portrait",
    "passivity-map",
    "lyapunov-surface",
];

fn run_all(dir: &Path) -> Vec<String> {
    for cmd in COMMANDS {
        let argv: Vec<String> = ["nldamp", cmd, "--out", &dir.display().to_string()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        nldamp_cli::run(&argv).unwrap();
    }
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn determinism_and_round_trip() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let names = run_all(a.path());
    let names_b = run_all(b.path());
    if names != names_b {
        return Err(format!("different file sets: {names:?} vs {names_b:?}"));
    }
    let read = |dir: &Path, n: &str| std::fs::read_to_string(dir.join(n)).unwrap();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| read(a.path(), n) != read(b.path(), n))
        .collect();

    // every trajectory file parses and re-serializes to the same bytes
    let mut trajectory_files = 0;
    let mut round_trip_failures = Vec::new();
    for name in &names {
        let text = read(a.path(), name);
        if !text.contains("\nt,x1,x2,v_raw,v,saturated,V,Vdot\n") {
            continue;
        }
        trajectory_files += 1;
        let blocks = read_blocks(&text).unwrap();
        let rewritten = blocks
            .iter()
            .map(|(meta, traj)| match meta.get("trajectory") {
                Some(i) => write_block(traj, &[("trajectory", i.clone())]),
                None => write_trajectory(traj),
            })
            .collect::<Vec<_>>()
            .join("\n");
        if rewritten != text {
            round_trip_failures.push(name.clone());
        }
    }
    // and a fresh in-memory trajectory survives the text form unchanged
    let spec = nonlinear(200.0)
        .with_saturation(Saturation::Bounded(25.0))
        .unwrap();
    let traj = run(spec, state(1.0, 0.0), 2.0);
    let in_memory = read_trajectory(&write_trajectory(&traj)).unwrap() == traj;

    check(
        differing.is_empty() && round_trip_failures.is_empty() && in_memory && trajectory_files > 0,
        format!(
            "{} files from {} commands, {} differ between runs; {trajectory_files} trajectory files, \
             {} fail to round-trip; in-memory round trip exact={in_memory}",
            names.len(),
            COMMANDS.len(),
            differing.len(),
            round_trip_failures.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        (
            "critical linear damping matches closed form",
            critical_damping_oracle,
        ),
        ("conservative plant preserves V", conservative_plant),
        ("nonlinear law has no overshoot", no_overshoot),
        ("V is non-increasing", lyapunov_decay),
        ("nonlinear converges faster than linear", faster_convergence),
        ("trajectories approach slope -sqrt(k)", attractor_slope),
        ("gain scaling similarity", k_scaling),
        ("saturated runs", saturation_behavior),
        ("passivity classifier equivalence", passivity_equivalence),
        ("finite-time region shape", finite_time_region_shape),
        ("RK4 and RK45 agree", solver_cross_check),
        ("determinism and CSV round trip", determinism_and_round_trip),
    ];
    let mut failed = 0;
    for (n, (name, criterion)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag}: {name} — {detail}", n + 1);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
