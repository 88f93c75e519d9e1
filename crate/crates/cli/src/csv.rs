//! Trajectory CSV files.
//!
//! A block is a run of `# key=value` comment lines carrying the resolved
//! controller and solver settings, the fixed header and one row per sample.
//! Floats are written with 17 significant digits so values round-trip
//! exactly. Several blocks in one file are separated by blank lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nldamp_core::{
    ControllerSpec, IntegratorKind, Sample, Saturation, SimulationConfig, State, Trajectory,
};

use crate::CliError;

pub const HEADER: &str = "t,x1,x2,v_raw,v,saturated,V,Vdot";

/// Formats a float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn comment_lines(traj: &Trajectory, extra: &[(&str, String)]) -> String {
    let c = &traj.controller;
    let cfg = &traj.config;
    let mut out = String::new();
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    let params: [(&str, String); 16] = [
        ("law", c.law.to_string()),
        ("k", c.k.to_string()),
        ("d", c.d.to_string()),
        ("s", c.saturation.to_string()),
        ("epsilon_reg", c.epsilon_reg.to_string()),
        ("damping_cap", c.damping_cap.to_string()),
        ("x1_0", cfg.initial.x1.to_string()),
        ("x2_0", cfg.initial.x2.to_string()),
        ("t_end", cfg.t_end.to_string()),
        ("integrator", cfg.integrator.to_string()),
        ("dt", cfg.dt.to_string()),
        ("rel_tol", cfg.rel_tol.to_string()),
        ("abs_tol", cfg.abs_tol.to_string()),
        ("min_step", cfg.min_step.to_string()),
        ("v_stop", cfg.v_stop.to_string()),
        ("sample_interval", cfg.sample_interval.to_string()),
    ];
    for (k, v) in params {
        let _ = writeln!(out, "# {k}={v}");
    }
    out
}

/// One trajectory block, optionally preceded by extra comment pairs.
pub fn write_block(traj: &Trajectory, extra: &[(&str, String)]) -> String {
    let mut out = comment_lines(traj, extra);
    out.push_str(HEADER);
    out.push('\n');
    for s in &traj.samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            num(s.t),
            num(s.state.x1),
            num(s.state.x2),
            num(s.v_raw),
            num(s.v),
            u8::from(s.saturated),
            num(s.lyapunov),
            num(s.lyapunov_rate),
        );
    }
    out
}

pub fn write_trajectory(traj: &Trajectory) -> String {
    write_block(traj, &[])
}

fn field<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, CliError> {
    let raw = map
        .get(key)
        .ok_or_else(|| CliError::Parse(format!("missing `# {key}=` line")))?;
    raw.parse()
        .map_err(|_| CliError::Parse(format!("bad value `{raw}` for `{key}`")))
}

fn parse_f64(s: &str, line: usize) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Parse(format!("line {line}: `{s}` is not a number")))
}

fn parse_block(
    lines: &[(usize, &str)],
) -> Result<(BTreeMap<String, String>, Trajectory), CliError> {
    let mut meta = BTreeMap::new();
    let mut samples = Vec::new();
    let mut seen_header = false;
    for &(n, line) in lines {
        if let Some(c) = line.strip_prefix('#') {
            if let Some((k, v)) = c.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !seen_header {
            if line.trim() != HEADER {
                return Err(CliError::Parse(format!(
                    "line {n}: expected header `{HEADER}`"
                )));
            }
            seen_header = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(CliError::Parse(format!(
                "line {n}: expected 8 columns, got {}",
                cols.len()
            )));
        }
        let saturated = match cols[5].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(CliError::Parse(format!(
                    "line {n}: bad saturated flag `{other}`"
                )))
            }
        };
        samples.push(Sample {
            t: parse_f64(cols[0], n)?,
            state: State {
                x1: parse_f64(cols[1], n)?,
                x2: parse_f64(cols[2], n)?,
            },
            v_raw: parse_f64(cols[3], n)?,
            v: parse_f64(cols[4], n)?,
            saturated,
            lyapunov: parse_f64(cols[6], n)?,
            lyapunov_rate: parse_f64(cols[7], n)?,
        });
    }
    if !seen_header {
        return Err(CliError::Parse("no header line".into()));
    }
    let controller = ControllerSpec {
        law: field(&meta, "law")?,
        k: field(&meta, "k")?,
        d: field(&meta, "d")?,
        saturation: field::<Saturation>(&meta, "s")?,
        epsilon_reg: field(&meta, "epsilon_reg")?,
        damping_cap: field(&meta, "damping_cap")?,
    };
    let config = SimulationConfig {
        initial: State {
            x1: field(&meta, "x1_0")?,
            x2: field(&meta, "x2_0")?,
        },
        t_end: field(&meta, "t_end")?,
        integrator: field::<IntegratorKind>(&meta, "integrator")?,
        dt: field(&meta, "dt")?,
        rel_tol: field(&meta, "rel_tol")?,
        abs_tol: field(&meta, "abs_tol")?,
        min_step: field(&meta, "min_step")?,
        v_stop: field(&meta, "v_stop")?,
        sample_interval: field(&meta, "sample_interval")?,
    };
    Ok((
        meta,
        Trajectory {
            controller,
            config,
            samples,
        },
    ))
}

/// Comment pairs of one block with its parsed trajectory.
pub type Block = (BTreeMap<String, String>, Trajectory);

/// Parses every block of a trajectory file, returning each block's comment
/// pairs alongside the trajectory.
pub fn read_blocks(text: &str) -> Result<Vec<Block>, CliError> {
    let mut blocks = Vec::new();
    let mut current: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(parse_block(&current)?);
                current.clear();
            }
        } else {
            current.push((i + 1, line));
        }
    }
    if !current.is_empty() {
        blocks.push(parse_block(&current)?);
    }
    Ok(blocks)
}

pub fn read_trajectory(text: &str) -> Result<Trajectory, CliError> {
    let mut blocks = read_blocks(text)?;
    match blocks.len() {
        1 => Ok(blocks.remove(0).1),
        n => Err(CliError::Parse(format!(
            "expected one trajectory block, found {n}"
        ))),
    }
}
