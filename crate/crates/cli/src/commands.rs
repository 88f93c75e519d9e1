//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::PathBuf;

use nldamp_core::analysis::{
    analyze, finite_time_region, overshoot_count, passivity_map, saturation_episodes,
    AnalysisOptions, GridSpec, PassivityClass,
};
use nldamp_core::controllers::critical_gain;
use nldamp_core::integrator::simulate;
use nldamp_core::{
    AnalysisReport, ControllerSpec, DampingLaw, Error as CoreError, Saturation, SimulationConfig,
    State, Trajectory,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{Command, DampingArg, Flags, Format};
use crate::csv::{num, write_block, write_trajectory};
use crate::svg::{self, Series};
use crate::CliError;

const DEFAULT_K: f64 = 100.0;
const DEFAULT_T_END: f64 = 2.0;
const DEFAULT_ALPHA: f64 = 1.0;
const NONLINEAR_FIT_WINDOW: (f64, f64) = (0.05, 0.8);
const LINEAR_FIT_WINDOW: (f64, f64) = (0.5, 1.5);
const PROBE_TIME: f64 = 1.0;

fn usage(e: CoreError) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: CoreError) -> CliError {
    CliError::Runtime(format!("integration failed: {e}"))
}

struct Output {
    dir: PathBuf,
    format: Format,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(flags: &Flags) -> Result<Self, CliError> {
        let dir = flags.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Output {
            dir,
            format: flags.format.unwrap_or(Format::Csv),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, content).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    fn svg(&self) -> bool {
        self.format == Format::Svg
    }

    /// Time-response and phase-plane plots for a set of trajectories.
    fn plots(
        &mut self,
        stem: &str,
        title: &str,
        runs: &[(String, &Trajectory)],
    ) -> Result<(), CliError> {
        if !self.svg() {
            return Ok(());
        }
        let time: Vec<Series> = runs
            .iter()
            .map(|(label, t)| Series {
                label: label.clone(),
                points: t.samples.iter().map(|s| (s.t, s.state.x1)).collect(),
            })
            .collect();
        let phase: Vec<Series> = runs
            .iter()
            .map(|(label, t)| Series {
                label: label.clone(),
                points: t.samples.iter().map(|s| (s.state.x1, s.state.x2)).collect(),
            })
            .collect();
        self.write(
            &format!("{stem}_time.svg"),
            &svg::line_plot(title, "t", "x1", &time),
        )?;
        self.write(
            &format!("{stem}_phase.svg"),
            &svg::line_plot(title, "x1", "x2", &phase),
        )
    }
}

fn resolve_spec(
    flags: &Flags,
    law: DampingLaw,
    k: f64,
    saturation: Saturation,
) -> Result<ControllerSpec, CliError> {
    let d = match law {
        DampingLaw::Linear => match flags.d.unwrap_or(DampingArg::Auto) {
            DampingArg::Auto => critical_gain(k).map_err(usage)?,
            DampingArg::Value(d) => d,
        },
        _ => 0.0,
    };
    let mut spec = ControllerSpec::new(law, k, d)
        .and_then(|s| s.with_saturation(saturation))
        .map_err(usage)?;
    if let Some(eps) = flags.epsilon_reg {
        spec = spec.with_epsilon_reg(eps).map_err(usage)?;
    }
    Ok(spec)
}

fn resolve_config(flags: &Flags, initial: State) -> Result<SimulationConfig, CliError> {
    let t_end = flags.t_end.unwrap_or(DEFAULT_T_END);
    let mut cfg = SimulationConfig {
        initial,
        t_end,
        integrator: flags
            .integrator
            .unwrap_or(nldamp_core::IntegratorKind::Rk45),
        dt: flags.dt.unwrap_or(SimulationConfig::DEFAULT_DT),
        rel_tol: flags.rel_tol.unwrap_or(SimulationConfig::DEFAULT_REL_TOL),
        abs_tol: flags.abs_tol.unwrap_or(SimulationConfig::DEFAULT_ABS_TOL),
        min_step: flags.min_step.unwrap_or(SimulationConfig::DEFAULT_MIN_STEP),
        v_stop: flags.v_stop.unwrap_or(SimulationConfig::DEFAULT_V_STOP),
        sample_interval: flags
            .sample_interval
            .unwrap_or(SimulationConfig::DEFAULT_SAMPLE_INTERVAL),
    };
    if flags.sample_interval.is_none() && t_end > 0.0 {
        cfg.sample_interval = cfg.sample_interval.min(t_end);
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn initial_state(flags: &Flags) -> Result<State, CliError> {
    State::new(flags.x1.unwrap_or(1.0), flags.x2.unwrap_or(0.0)).map_err(usage)
}

fn gains(flags: &Flags, default: &[f64]) -> Result<Vec<f64>, CliError> {
    let ks = flags.k_list.clone().unwrap_or_else(|| default.to_vec());
    if ks.is_empty() {
        return Err(CliError::Usage("--k-list needs at least one gain".into()));
    }
    Ok(ks)
}

fn opt(v: Option<f64>, missing: &str) -> String {
    v.map_or_else(|| missing.to_string(), num)
}

pub fn dispatch(command: &Command) -> Result<Vec<PathBuf>, CliError> {
    let flags = command.flags();
    let mut out = Output::new(flags)?;
    match command {
        Command::Simulate(f) => cmd_simulate(f, &mut out)?,
        Command::Compare(f) => cmd_compare(f, &mut out)?,
        Command::SweepK(f) => cmd_sweep_k(f, &mut out)?,
        Command::SaturationStudy(f) => cmd_saturation_study(f, &mut out)?,
        Command::Portrait(f) => cmd_portrait(f, &mut out)?,
        Command::PassivityMap(f) => cmd_passivity_map(f, &mut out)?,
        Command::LyapunovSurface(f) => cmd_lyapunov_surface(f, &mut out)?,
    }
    Ok(out.written)
}

fn cmd_simulate(flags: &Flags, out: &mut Output) -> Result<(), CliError> {
    let law = flags.law.unwrap_or(DampingLaw::Nonlinear);
    let spec = resolve_spec(
        flags,
        law,
        flags.k.unwrap_or(DEFAULT_K),
        flags.s.unwrap_or(Saturation::Unbounded),
    )?;
    let cfg = resolve_config(flags, initial_state(flags)?)?;
    let traj = simulate(&spec, &cfg).map_err(runtime)?;
    out.write("simulate.csv", &write_trajectory(&traj))?;
    out.plots(
        "simulate",
        &format!("{law} damping, k={}", spec.k),
        &[(law.to_string(), &traj)],
    )
}

/// Sample at `t`, or the final sample when the run stopped earlier.
fn sample_at(traj: &Trajectory, t: f64) -> &nldamp_core::Sample {
    traj.samples
        .iter()
        .rev()
        .find(|s| s.t <= t + 1e-12)
        .unwrap_or(&traj.samples[0])
}

#[derive(Debug, Serialize)]
struct LawReport {
    law: DampingLaw,
    #[serde(flatten)]
    report: AnalysisReport,
    final_time: f64,
    abs_x1_at_probe: f64,
}

#[derive(Debug, Serialize)]
struct CompareReport {
    scenario: &'static str,
    k: f64,
    d: f64,
    probe_time: f64,
    nonlinear: LawReport,
    linear: LawReport,
}

fn law_report(traj: &Trajectory, window: (f64, f64), probe: f64) -> Result<LawReport, CliError> {
    let options = AnalysisOptions {
        decay_window: Some(window),
        ..AnalysisOptions::default()
    };
    Ok(LawReport {
        law: traj.controller.law,
        report: analyze(traj, &options).map_err(usage)?,
        final_time: traj.samples.last().map_or(0.0, |s| s.t),
        abs_x1_at_probe: sample_at(traj, probe).state.x1.abs(),
    })
}

fn cmd_compare(flags: &Flags, out: &mut Output) -> Result<(), CliError> {
    let k = flags.k.unwrap_or(DEFAULT_K);
    let saturation = flags.s.unwrap_or(Saturation::Unbounded);
    let nl_spec = resolve_spec(flags, DampingLaw::Nonlinear, k, saturation)?;
    let lin_spec = resolve_spec(flags, DampingLaw::Linear, k, saturation)?;
    let cfg = resolve_config(flags, initial_state(flags)?)?;
    let (nl, lin) = rayon::join(|| simulate(&nl_spec, &cfg), || simulate(&lin_spec, &cfg));
    let (nl, lin) = (nl.map_err(runtime)?, lin.map_err(runtime)?);

    out.write("compare_nonlinear.csv", &write_trajectory(&nl))?;
    out.write("compare_linear.csv", &write_trajectory(&lin))?;
    out.write("compare.csv", &aligned_csv(&nl, &lin))?;

    let probe = PROBE_TIME.min(cfg.t_end);
    let report = CompareReport {
        scenario: "compare",
        k,
        d: lin_spec.d,
        probe_time: probe,
        nonlinear: law_report(&nl, NONLINEAR_FIT_WINDOW, probe)?,
        linear: law_report(&lin, LINEAR_FIT_WINDOW, probe)?,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    out.write("compare_report.json", &(json + "\n"))?;
    out.plots(
        "compare",
        &format!("linear vs nonlinear damping, k={k}"),
        &[
            ("nonlinear".into(), &nl),
            (format!("linear d={}", lin_spec.d), &lin),
        ],
    )
}

/// Both runs on one time axis; a run without a sample at a given instant
/// leaves its columns empty.
fn aligned_csv(nl: &Trajectory, lin: &Trajectory) -> String {
    let mut times: Vec<f64> = nl.times().chain(lin.times()).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut out = format!(
        "# law_a=nonlinear\n# law_b=linear\n# k={}\n# d={}\n",
        nl.controller.k, lin.controller.d
    );
    out.push_str("t,x1_nonlinear,x2_nonlinear,v_nonlinear,x1_linear,x2_linear,v_linear\n");
    let (mut i, mut j) = (0, 0);
    let cols = |traj: &Trajectory, idx: &mut usize, t: f64| {
        while *idx < traj.samples.len() && traj.samples[*idx].t < t {
            *idx += 1;
        }
        match traj.samples.get(*idx) {
            Some(s) if s.t == t => format!("{},{},{}", num(s.state.x1), num(s.state.x2), num(s.v)),
            _ => ",,".to_string(),
        }
    };
    for t in times {
        let a = cols(nl, &mut i, t);
        let b = cols(lin, &mut j, t);
        let _ = writeln!(out, "{},{a},{b}", num(t));
    }
    out
}

fn label_k(k: f64) -> String {
    k.to_string()
}

/// Largest deviation between a gain-`k` run rescaled to unit gain and the
/// unit-gain reference, over the sampling instants both runs share.
fn scaling_deviation(traj: &Trajectory, reference: &Trajectory) -> Option<f64> {
    let root_k = traj.controller.k.sqrt();
    let interval = traj.config.sample_interval;
    let index = |t: f64, h: f64| {
        let r = t / h;
        ((r - r.round()).abs() < 1e-6).then(|| r.round() as u64)
    };
    let refs: std::collections::HashMap<u64, &nldamp_core::Sample> = reference
        .samples
        .iter()
        .filter_map(|s| index(s.t, reference.config.sample_interval).map(|i| (i, s)))
        .collect();
    let mut worst: Option<f64> = None;
    for s in &traj.samples {
        let Some(i) = index(s.t, interval) else {
            continue;
        };
        let Some(r) = refs.get(&i) else { continue };
        let dev = (s.state.x1 - r.state.x1)
            .abs()
            .max((s.state.x2 / root_k - r.state.x2).abs());
        worst = Some(worst.map_or(dev, |w: f64| w.max(dev)));
    }
    worst
}

fn cmd_sweep_k(flags: &Flags, out: &mut Output) -> Result<(), CliError> {
    let ks = gains(flags, &[10.0, 100.0, 1000.0])?;
    let saturation = flags.s.unwrap_or(Saturation::Unbounded);
    let initial = initial_state(flags)?;
    let cfg = resolve_config(flags, initial)?;
    let specs = ks
        .iter()
        .map(|&k| resolve_spec(flags, DampingLaw::Nonlinear, k, saturation))
        .collect::<Result<Vec<_>, _>>()?;

    // gain-1 references sampled so that sample i corresponds to the same rescaled time
    let unit = resolve_spec(flags, DampingLaw::Nonlinear, 1.0, saturation)?;
    let runs: Vec<Result<(Trajectory, Option<Trajectory>), CoreError>> = specs
        .par_iter()
        .map(|spec| {
            let traj = simulate(spec, &cfg)?;
            let reference = if saturation == Saturation::Unbounded {
                let root_k = spec.k.sqrt();
                let ref_cfg = SimulationConfig {
                    t_end: cfg.t_end * root_k,
                    sample_interval: cfg.sample_interval * root_k,
                    ..cfg
                };
                Some(simulate(&unit, &ref_cfg)?)
            } else {
                None
            };
            Ok((traj, reference))
        })
        .collect();

    let mut summary = String::from(
        "k,settling_time,overshoot_count,attractor_slope_error,scaling_deviation,final_t\n",
    );
    let mut plotted = Vec::new();
    for run in runs {
        let (traj, reference) = run.map_err(runtime)?;
        let k = traj.controller.k;
        out.write(
            &format!("sweep_k_{}.csv", label_k(k)),
            &write_trajectory(&traj),
        )?;
        let report = analyze(&traj, &AnalysisOptions::default()).map_err(usage)?;
        let dev = reference.as_ref().and_then(|r| scaling_deviation(&traj, r));
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            k,
            opt(report.settling_time, "NotReached"),
            report.overshoot_count,
            opt(report.attractor_slope_error, "NotApplicable"),
            opt(dev, "NotApplicable"),
            num(traj.samples.last().map_or(0.0, |s| s.t)),
        );
        plotted.push(traj);
    }
    out.write("sweep_k_summary.csv", &summary)?;
    let labelled: Vec<(String, &Trajectory)> = plotted
        .iter()
        .map(|t| (format!("k={}", t.controller.k), t))
        .collect();
    out.plots("sweep_k", "nonlinear damping, gain sweep", &labelled)
}

fn cmd_saturation_study(flags: &Flags, out: &mut Output) -> Result<(), CliError> {
    let ks = gains(flags, &[50.0, 100.0, 150.0, 200.0])?;
    let saturation = flags.s.unwrap_or(Saturation::Bounded(25.0));
    let initial = initial_state(flags)?;
    let cfg = resolve_config(flags, initial)?;
    let mut specs = ks
        .iter()
        .map(|&k| resolve_spec(flags, DampingLaw::Nonlinear, k, saturation))
        .collect::<Result<Vec<_>, _>>()?;
    if saturation != Saturation::Unbounded {
        let k_max = ks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        specs.push(resolve_spec(
            flags,
            DampingLaw::Nonlinear,
            k_max,
            Saturation::Unbounded,
        )?);
    }
    let runs: Vec<_> = specs.par_iter().map(|spec| simulate(spec, &cfg)).collect();

    let mut summary = String::from(
        "k,s,overshoot_count,saturation_exit_time,episodes,max_exit_margin,v_raw_0,v_0,final_saturated\n",
    );
    let mut plotted = Vec::new();
    for run in runs {
        let traj = run.map_err(runtime)?;
        let spec = traj.controller;
        out.write(
            &format!("saturation_k{}_s{}.csv", label_k(spec.k), spec.saturation),
            &write_trajectory(&traj),
        )?;
        let report = analyze(&traj, &AnalysisOptions::default()).map_err(usage)?;
        let episodes = saturation_episodes(&traj);
        // exit time minus predicted bound; <= 0 when every exit is within its bound
        let margin = spec.saturation.limit().and_then(|s| {
            episodes
                .iter()
                .filter_map(|ep| ep.exit_time.map(|x| x - ep.predicted_exit_bound(s)))
                .reduce(f64::max)
        });
        let first = &traj.samples[0];
        let last = traj.samples.last().expect("non-empty");
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{}",
            spec.k,
            spec.saturation,
            report.overshoot_count,
            opt(report.saturation_exit_time, "NotApplicable"),
            episodes.len(),
            opt(margin, "NotApplicable"),
            num(first.v_raw),
            num(first.v),
            u8::from(last.saturated),
        );
        plotted.push(traj);
    }
    out.write("saturation_summary.csv", &summary)?;
    let labelled: Vec<(String, &Trajectory)> = plotted
        .iter()
        .map(|t| {
            (
                format!("k={} S={}", t.controller.k, t.controller.saturation),
                t,
            )
        })
        .collect();
    out.plots("saturation", "nonlinear damping with saturation", &labelled)
}

/// Evenly spaced states on circles around the origin, starting on the
/// positive `x1` axis. Components within 1e-15 of zero are snapped to zero.
pub fn ring_states(radii: &[f64], per_ring: usize) -> Vec<State> {
    let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
    radii
        .iter()
        .flat_map(|&r| {
            (0..per_ring).map(move |j| {
                let angle = std::f64::consts::TAU * j as f64 / per_ring as f64;
                let (sin, cos) = angle.sin_cos();
                State {
                    x1: snap(r * cos),
                    x2: snap(r * sin),
                }
            })
        })
        .collect()
}

fn quadrant(s: State) -> &'static str {
    match (s.x1 > 0.0, s.x1 < 0.0, s.x2 > 0.0, s.x2 < 0.0) {
        (true, _, true, _) => "I",
        (_, true, true, _) => "II",
        (_, true, _, true) => "III",
        (true, _, _, true) => "IV",
        _ => "axis",
    }
}

fn cmd_portrait(flags: &Flags, out: &mut Output) -> Result<(), CliError> {
    let radii = flags.radii.clone().unwrap_or_else(|| vec![1.0, 2.0]);
    let per_ring = flags.ring_count.unwrap_or(16);
    if per_ring == 0 || radii.is_empty() || radii.iter().any(|r| r.is_nan() || *r <= 0.0) {
        return Err(CliError::Usage(
            "portrait needs positive radii and --ring-count >= 1".into(),
        ));
    }
    let law = flags.law.unwrap_or(DampingLaw::Nonlinear);
    let spec = resolve_spec(
        flags,
        law,
        flags.k.unwrap_or(DEFAULT_K),
        flags.s.unwrap_or(Saturation::Unbounded),
    )?;
    let configs = ring_states(&radii, per_ring)
        .into_iter()
        .map(|s| resolve_config(flags, s))
        .collect::<Result<Vec<_>, _>>()?;
    let runs: Vec<_> = configs.par_iter().map(|cfg| simulate(&spec, cfg)).collect();

    let mut blocks = String::new();
    let mut summary = String::from("index,x1_0,x2_0,quadrant,overshoot_count,final_t,final_V\n");
    let mut trajectories = Vec::new();
    for (i, run) in runs.into_iter().enumerate() {
        let traj = run.map_err(runtime)?;
        if i > 0 {
            blocks.push('\n');
        }
        blocks.push_str(&write_block(&traj, &[("trajectory", i.to_string())]));
        let last = traj.samples.last().expect("non-empty");
        let _ = writeln!(
            summary,
            "{i},{},{},{},{},{},{}",
            num(traj.config.initial.x1),
            num(traj.config.initial.x2),
            quadrant(traj.config.initial),
            overshoot_count(&traj),
            num(last.t),
            num(last.lyapunov),
        );
        trajectories.push(traj);
    }
    out.write("portrait.csv", &blocks)?;
    out.write("portrait_summary.csv", &summary)?;
    if out.svg() {
        let phase: Vec<Series> = trajectories
            .iter()
            .map(|t| Series {
                label: String::new(),
                points: t.samples.iter().map(|s| (s.state.x1, s.state.x2)).collect(),
            })
            .collect();
        out.write(
            "portrait_phase.svg",
            &svg::line_plot(&format!("phase portrait, k={}", spec.k), "x1", "x2", &phase),
        )?;
    }
    Ok(())
}

fn grid(flags: &Flags) -> Result<GridSpec, CliError> {
    let n = flags.resolution.unwrap_or(201);
    GridSpec::new(
        (flags.x1_min.unwrap_or(-2.0), flags.x1_max.unwrap_or(2.0)),
        (flags.x2_min.unwrap_or(-2.0), flags.x2_max.unwrap_or(2.0)),
        n,
        n,
    )
    .map_err(usage)
}

fn grid_bounds(g: &GridSpec) -> (f64, f64, f64, f64) {
    (g.x1_range.0, g.x1_range.1, g.x2_range.0, g.x2_range.1)
}

fn cmd_passivity_map(flags: &Flags, out: &mut Output) -> Result<(), CliError> {
    let g = grid(flags)?;
    let map = passivity_map(&g).map_err(usage)?;
    let mut csv = String::from("x1,x2,class\n");
    for (s, class) in map.iter() {
        let _ = writeln!(csv, "{},{},{class}", num(s.x1), num(s.x2));
    }
    out.write("passivity_map.csv", &csv)?;
    if out.svg() {
        let cells = map.iter().map(|(s, c)| (s.x1, s.x2, *c));
        let plot = svg::cell_plot(
            "passivity regions",
            cells,
            g.cell_width(),
            grid_bounds(&g),
            |c| match c {
                PassivityClass::Passive => "#ffffff",
                PassivityClass::NonPassive => "#9e9e9e",
                PassivityClass::Boundary => "#000000",
            },
        );
        out.write("passivity_map.svg", &plot)?;
    }
    Ok(())
}

fn cmd_lyapunov_surface(flags: &Flags, out: &mut Output) -> Result<(), CliError> {
    let g = grid(flags)?;
    let k = flags.k.unwrap_or(DEFAULT_K);
    let alpha = flags.alpha.unwrap_or(DEFAULT_ALPHA);
    let spec = resolve_spec(flags, DampingLaw::Nonlinear, k, Saturation::Unbounded)?;
    let region = finite_time_region(&g, k, alpha, spec.epsilon_reg).map_err(usage)?;
    let mut csv =
        format!("# k={k}\n# alpha={alpha}\nx1,x2,Vdot_magnitude,alpha_sqrtV,condition_holds\n");
    for ((s, holds), (vdot, sqrt_v)) in region.mask.iter().zip(
        region
            .vdot_magnitude
            .cells
            .iter()
            .zip(&region.alpha_sqrt_v.cells),
    ) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            num(s.x1),
            num(s.x2),
            num(*vdot),
            num(*sqrt_v),
            u8::from(*holds)
        );
    }
    out.write("lyapunov_surface.csv", &csv)?;
    if out.svg() {
        let cells = region.mask.iter().map(|(s, h)| (s.x1, s.x2, *h));
        let plot = svg::cell_plot(
            &format!("finite-time region, k={k}, alpha={alpha}"),
            cells,
            g.cell_width(),
            grid_bounds(&g),
            |h| if *h { "#d62728" } else { "#e8f5e9" },
        );
        out.write("lyapunov_surface.svg", &plot)?;
    }
    Ok(())
}
