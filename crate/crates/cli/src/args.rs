//! Command-line flags and the flat `key = value` config file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nldamp_core::{DampingLaw, IntegratorKind, Saturation};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "nldamp",
    version,
    about = "Nonlinear damping control experiments for the double integrator",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one controller and write its trajectory.
    Simulate(Flags),
    /// Compare nonlinear damping against critical linear damping.
    Compare(Flags),
    /// Nonlinear damping for several gains.
    SweepK(Flags),
    /// Nonlinear damping with a saturated control amplitude.
    SaturationStudy(Flags),
    /// Phase portrait from rings of initial states.
    Portrait(Flags),
    /// Passivity class of every grid cell.
    PassivityMap(Flags),
    /// Lyapunov rate and finite-time surfaces over a grid.
    LyapunovSurface(Flags),
}

impl Command {
    pub fn flags(&self) -> &Flags {
        match self {
            Command::Simulate(f)
            | Command::Compare(f)
            | Command::SweepK(f)
            | Command::SaturationStudy(f)
            | Command::Portrait(f)
            | Command::PassivityMap(f)
            | Command::LyapunovSurface(f) => f,
        }
    }
}

/// Linear damping coefficient, or `auto` for critical damping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DampingArg {
    Auto,
    Value(f64),
}

impl FromStr for DampingArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(DampingArg::Auto);
        }
        s.parse::<f64>()
            .map(DampingArg::Value)
            .map_err(|_| format!("`{s}` is neither a number nor `auto`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Svg,
}

/// Comma-separated values of one flag (an alias so clap treats the flag as
/// taking a single argument).
pub type FloatList = Vec<f64>;

fn parse_list(s: &str) -> Result<FloatList, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{p}` is not a number"))
        })
        .collect()
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Proportional feedback gain.
    #[arg(long)]
    pub k: Option<f64>,
    /// Linear damping coefficient or `auto` (critical damping).
    #[arg(long, value_parser = DampingArg::from_str)]
    pub d: Option<DampingArg>,
    /// Damping law: none, linear or nonlinear.
    #[arg(long, value_parser = DampingLaw::from_str)]
    pub law: Option<DampingLaw>,
    #[arg(long, allow_negative_numbers = true)]
    pub x1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub x2: Option<f64>,
    /// Control amplitude limit, `inf` for unbounded.
    #[arg(long, value_parser = Saturation::from_str)]
    pub s: Option<Saturation>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long, value_parser = IntegratorKind::from_str)]
    pub integrator: Option<IntegratorKind>,
    /// Fixed step for rk4.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long)]
    pub min_step: Option<f64>,
    /// Stop once the Lyapunov value drops below this (0 disables).
    #[arg(long)]
    pub v_stop: Option<f64>,
    #[arg(long)]
    pub sample_interval: Option<f64>,
    #[arg(long)]
    pub epsilon_reg: Option<f64>,
    /// Time constant of the finite-time inequality.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated gains for sweeps.
    #[arg(long, value_parser = parse_list)]
    pub k_list: Option<FloatList>,
    /// Comma-separated ring radii for the portrait.
    #[arg(long, value_parser = parse_list)]
    pub radii: Option<FloatList>,
    /// Initial states per portrait ring.
    #[arg(long)]
    pub ring_count: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub x1_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub x1_max: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub x2_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub x2_max: Option<f64>,
    /// Grid cells per axis.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Flat `key = value` file with the same names as the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Finds `--config PATH` or `--config=PATH` in raw arguments.
fn find_config(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Turns config-file lines into `--key value` arguments.
pub fn config_file_args(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                n + 1
            ))
        })?;
        let key = key.trim().replace('_', "-");
        if key == "config" {
            return Err(CliError::Usage(format!(
                "{}:{}: nested config files are not supported",
                path.display(),
                n + 1
            )));
        }
        out.push(format!("--{key}"));
        out.push(value.trim().to_string());
    }
    Ok(out)
}

/// Parses `argv` (program name first). Config-file values are inserted
/// ahead of the command-line flags so the flags take precedence.
pub fn parse(argv: &[String]) -> Result<Cli, CliError> {
    let mut args = argv.to_vec();
    if let Some(path) = find_config(&argv[1.min(argv.len())..]) {
        let extra = config_file_args(&path)?;
        if let Some(pos) = args.iter().skip(1).position(|a| !a.starts_with('-')) {
            let insert_at = pos + 2;
            args.splice(insert_at..insert_at, extra);
        }
    }
    Cli::try_parse_from(args).map_err(CliError::Clap)
}
