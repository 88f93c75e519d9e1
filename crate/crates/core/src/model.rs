//! Domain types shared by the controllers, the integrator and the analysis code.

use std::fmt;
use std::ops::Neg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default floor applied to `|x1|` in the nonlinear damping term.
pub const DEFAULT_EPSILON_REG: f64 = 1e-12;
/// Default upper bound on the magnitude of the nonlinear damping term.
pub const DEFAULT_DAMPING_CAP: f64 = 1e9;

/// Phase-plane state: the controlled output `x1` and its derivative `x2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x1: f64,
    pub x2: f64,
}

impl State {
    /// Builds a state, rejecting non-finite components.
    pub fn new(x1: f64, x2: f64) -> Result<Self> {
        let s = State { x1, x2 };
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::invalid(
                "state",
                format!("({x1}, {x2}) is not finite"),
            ))
        }
    }

    pub const fn origin() -> Self {
        State { x1: 0.0, x2: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }

    pub fn is_origin(&self) -> bool {
        self.x1 == 0.0 && self.x2 == 0.0
    }

    pub(crate) fn axpy(self, h: f64, d: (f64, f64)) -> Self {
        State {
            x1: self.x1 + h * d.0,
            x2: self.x2 + h * d.1,
        }
    }
}

impl Neg for State {
    type Output = State;

    fn neg(self) -> State {
        State {
            x1: -self.x1,
            x2: -self.x2,
        }
    }
}

/// Which damping term closes the loop around the proportional feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DampingLaw {
    /// No damping: the conservative oscillator `x2' = -k x1`.
    None,
    /// Linear damping `d x2`.
    Linear,
    /// Nonlinear damping `x2^2 |x1|^-1 sign(x2)`.
    Nonlinear,
}

impl DampingLaw {
    pub fn name(self) -> &'static str {
        match self {
            DampingLaw::None => "none",
            DampingLaw::Linear => "linear",
            DampingLaw::Nonlinear => "nonlinear",
        }
    }
}

impl fmt::Display for DampingLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DampingLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DampingLaw::None),
            "linear" => Ok(DampingLaw::Linear),
            "nonlinear" => Ok(DampingLaw::Nonlinear),
            other => Err(Error::invalid("law", format!("unknown law `{other}`"))),
        }
    }
}

/// Amplitude limit on the applied control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Saturation {
    Unbounded,
    Bounded(f64),
}

impl Saturation {
    pub fn limit(self) -> Option<f64> {
        match self {
            Saturation::Unbounded => None,
            Saturation::Bounded(s) => Some(s),
        }
    }
}

impl fmt::Display for Saturation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Saturation::Unbounded => f.write_str("inf"),
            Saturation::Bounded(s) => write!(f, "{s}"),
        }
    }
}

impl std::str::FromStr for Saturation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Saturation::Unbounded);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::invalid("saturation", format!("`{s}` is not a number or `inf`")))?;
        if v.is_infinite() && v > 0.0 {
            Ok(Saturation::Unbounded)
        } else if v > 0.0 {
            Ok(Saturation::Bounded(v))
        } else {
            Err(Error::invalid(
                "saturation",
                format!("must be > 0, got {v}"),
            ))
        }
    }
}

/// Active damping law and its parameters.
///
/// Construct through [`ControllerSpec::new`] or the per-law helpers; every
/// constructor validates the parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub law: DampingLaw,
    /// Proportional feedback gain, `k > 0`.
    pub k: f64,
    /// Linear damping coefficient, only read when `law == Linear`.
    pub d: f64,
    pub saturation: Saturation,
    /// Floor for `|x1|` in the nonlinear damping denominator.
    pub epsilon_reg: f64,
    /// Cap on the magnitude of the nonlinear damping term.
    pub damping_cap: f64,
}

impl ControllerSpec {
    pub fn new(law: DampingLaw, k: f64, d: f64) -> Result<Self> {
        let spec = ControllerSpec {
            law,
            k,
            d,
            saturation: Saturation::Unbounded,
            epsilon_reg: DEFAULT_EPSILON_REG,
            damping_cap: DEFAULT_DAMPING_CAP,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn undamped(k: f64) -> Result<Self> {
        Self::new(DampingLaw::None, k, 0.0)
    }

    pub fn linear(k: f64, d: f64) -> Result<Self> {
        Self::new(DampingLaw::Linear, k, d)
    }

    pub fn nonlinear(k: f64) -> Result<Self> {
        Self::new(DampingLaw::Nonlinear, k, 0.0)
    }

    pub fn with_saturation(mut self, saturation: Saturation) -> Result<Self> {
        self.saturation = saturation;
        self.validate()?;
        Ok(self)
    }

    pub fn with_epsilon_reg(mut self, epsilon_reg: f64) -> Result<Self> {
        self.epsilon_reg = epsilon_reg;
        self.validate()?;
        Ok(self)
    }

    pub fn with_damping_cap(mut self, damping_cap: f64) -> Result<Self> {
        self.damping_cap = damping_cap;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::invalid(
                "k",
                format!("must be finite and > 0, got {}", self.k),
            ));
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(Error::invalid(
                "d",
                format!("must be finite and >= 0, got {}", self.d),
            ));
        }
        if let Saturation::Bounded(s) = self.saturation {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(
                    "saturation",
                    format!("must be > 0, got {s}"),
                ));
            }
        }
        if !(self.epsilon_reg > 0.0 && self.epsilon_reg.is_finite()) {
            return Err(Error::invalid(
                "epsilon_reg",
                format!("must be finite and > 0, got {}", self.epsilon_reg),
            ));
        }
        if !(self.damping_cap > 0.0) || self.damping_cap.is_nan() {
            return Err(Error::invalid(
                "damping_cap",
                format!("must be > 0, got {}", self.damping_cap),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorKind {
    /// Dormand-Prince 5(4) with step-size control.
    Rk45,
    /// Classical fixed-step fourth-order Runge-Kutta.
    Rk4,
}

impl fmt::Display for IntegratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntegratorKind::Rk45 => "rk45",
            IntegratorKind::Rk4 => "rk4",
        })
    }
}

impl std::str::FromStr for IntegratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk45" => Ok(IntegratorKind::Rk45),
            "rk4" => Ok(IntegratorKind::Rk4),
            other => Err(Error::invalid(
                "integrator",
                format!("unknown integrator `{other}`"),
            )),
        }
    }
}

/// Initial condition, horizon and solver settings for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub initial: State,
    pub t_end: f64,
    pub integrator: IntegratorKind,
    /// Fixed step for [`IntegratorKind::Rk4`].
    pub dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Smallest step the adaptive solver may take before giving up.
    pub min_step: f64,
    /// Stop as soon as the Lyapunov value drops below this; 0 disables.
    pub v_stop: f64,
    pub sample_interval: f64,
}

impl SimulationConfig {
    pub const DEFAULT_DT: f64 = 1e-5;
    pub const DEFAULT_REL_TOL: f64 = 1e-9;
    pub const DEFAULT_ABS_TOL: f64 = 1e-12;
    pub const DEFAULT_MIN_STEP: f64 = 1e-13;
    pub const DEFAULT_V_STOP: f64 = 1e-20;
    pub const DEFAULT_SAMPLE_INTERVAL: f64 = 1e-3;

    /// Adaptive integration with default tolerances.
    pub fn new(initial: State, t_end: f64) -> Result<Self> {
        let cfg = SimulationConfig {
            initial,
            t_end,
            integrator: IntegratorKind::Rk45,
            dt: Self::DEFAULT_DT,
            rel_tol: Self::DEFAULT_REL_TOL,
            abs_tol: Self::DEFAULT_ABS_TOL,
            min_step: Self::DEFAULT_MIN_STEP,
            v_stop: Self::DEFAULT_V_STOP,
            sample_interval: Self::DEFAULT_SAMPLE_INTERVAL.min(t_end),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.initial.is_finite() {
            return Err(Error::invalid("initial", "state must be finite"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid(
                "t_end",
                format!("must be finite and > 0, got {}", self.t_end),
            ));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval <= self.t_end) {
            return Err(Error::invalid(
                "sample_interval",
                format!("must be in (0, t_end], got {}", self.sample_interval),
            ));
        }
        if !(self.v_stop >= 0.0 && self.v_stop.is_finite()) {
            return Err(Error::invalid(
                "v_stop",
                format!("must be finite and >= 0, got {}", self.v_stop),
            ));
        }
        match self.integrator {
            IntegratorKind::Rk4 => {
                if !(self.dt > 0.0 && self.dt < self.t_end) {
                    return Err(Error::invalid(
                        "dt",
                        format!("must be in (0, t_end), got {}", self.dt),
                    ));
                }
            }
            IntegratorKind::Rk45 => {
                if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
                    return Err(Error::invalid(
                        "rel_tol",
                        format!("must be > 0, got {}", self.rel_tol),
                    ));
                }
                if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
                    return Err(Error::invalid(
                        "abs_tol",
                        format!("must be > 0, got {}", self.abs_tol),
                    ));
                }
                if !(self.min_step > 0.0 && self.min_step < self.t_end) {
                    return Err(Error::invalid(
                        "min_step",
                        format!("must be in (0, t_end), got {}", self.min_step),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One recorded instant of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    /// Control before the amplitude clamp.
    pub v_raw: f64,
    /// Applied control.
    pub v: f64,
    pub saturated: bool,
    /// Lyapunov value `x2^2/2 + k x1^2/2`.
    pub lyapunov: f64,
    /// Time derivative of the Lyapunov value along the closed loop.
    pub lyapunov_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub controller: ControllerSpec,
    pub config: SimulationConfig,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn final_sample(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayModel {
    Linear,
    Quadratic,
}

/// Least-squares polynomial in `t`, coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
}

impl PolyFit {
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * t + c)
    }
}

/// Polynomial fits of `log10|x1|` against time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Preferred model.
    pub model: DecayModel,
    /// Coefficients of the preferred model (ascending powers).
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    pub linear: PolyFit,
    pub quadratic: PolyFit,
    pub window: (f64, f64),
}

/// Metrics derived from one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub overshoot_count: usize,
    /// `None` when the output never settles below the threshold.
    pub settling_time: Option<f64>,
    pub final_v: f64,
    /// `None` when the fit window holds a zero or a sign change of `x1`, or
    /// fewer than three samples.
    pub decay_fit: Option<DecayFit>,
    /// `None` when no sample falls inside the slope window.
    pub attractor_slope_error: Option<f64>,
    /// Last true-to-false transition of the saturation flag. `None` when the
    /// run never saturated or ends saturated.
    pub saturation_exit_time: Option<f64>,
}
