//! Closed-loop integration and trajectory recording.
//!
//! The control is re-evaluated at every Runge-Kutta stage, so the loop is
//! integrated as a continuous ODE. Steps are clipped to land exactly on the
//! sampling grid, and changes of the saturation mode (unsaturated, clamped
//! at `+S`, clamped at `-S`) are located by bisection and recorded as extra
//! samples.

use crate::analysis::lyapunov;
use crate::controllers::{control, sign};
use crate::error::{Error, Result};
use crate::model::{ControllerSpec, IntegratorKind, Sample, SimulationConfig, State, Trajectory};

/// Time resolution of saturation entry/exit instants.
pub const EVENT_TIME_TOLERANCE: f64 = 1e-12;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
/// A step within this relative distance of a grid instant is stretched to hit it.
const STRETCH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: State,
    pub dt_used: f64,
    /// Scaled error norm of the accepted step (`<= 1` when accepted); zero for
    /// fixed-step RK4.
    pub error_estimate: f64,
}

/// An accepted adaptive step together with the proposed next step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveStep {
    pub step: StepResult,
    pub dt_next: f64,
}

/// Error-control settings for [`step_rk45`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub min_step: f64,
}

impl From<&SimulationConfig> for Tolerances {
    fn from(cfg: &SimulationConfig) -> Self {
        Tolerances {
            rel_tol: cfg.rel_tol,
            abs_tol: cfg.abs_tol,
            min_step: cfg.min_step,
        }
    }
}

/// Closed-loop vector field `(x2, v)` with `v` the applied (clamped) control.
pub fn derivative(state: State, spec: &ControllerSpec) -> (f64, f64) {
    (state.x2, control(state, spec).v)
}

fn rk4_raw(state: State, spec: &ControllerSpec, h: f64) -> State {
    let k1 = derivative(state, spec);
    let k2 = derivative(state.axpy(0.5 * h, k1), spec);
    let k3 = derivative(state.axpy(0.5 * h, k2), spec);
    let k4 = derivative(state.axpy(h, k3), spec);
    State {
        x1: state.x1 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        x2: state.x2 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    }
}

/// One classical RK4 step of size `dt` starting at time `t`.
pub fn step_rk4(t: f64, state: State, spec: &ControllerSpec, dt: f64) -> Result<StepResult> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
    }
    let next_state = rk4_raw(state, spec, dt);
    if !next_state.is_finite() {
        return Err(Error::IntegrationBlowup { t, state });
    }
    Ok(StepResult {
        next_state,
        dt_used: dt,
        error_estimate: 0.0,
    })
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn lincomb(state: State, h: f64, terms: &[(f64, (f64, f64))]) -> State {
    let (mut d1, mut d2) = (0.0, 0.0);
    for &(c, k) in terms {
        d1 += c * k.0;
        d2 += c * k.1;
    }
    State {
        x1: state.x1 + h * d1,
        x2: state.x2 + h * d2,
    }
}

/// Fifth-order solution and the embedded error vector for one trial step.
fn dopri_trial(state: State, spec: &ControllerSpec, h: f64) -> (State, (f64, f64)) {
    let f = |s: State| derivative(s, spec);
    let k1 = f(state);
    let k2 = f(lincomb(state, h, &[(A21, k1)]));
    let k3 = f(lincomb(state, h, &[(A31, k1), (A32, k2)]));
    let k4 = f(lincomb(state, h, &[(A41, k1), (A42, k2), (A43, k3)]));
    let k5 = f(lincomb(
        state,
        h,
        &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)],
    ));
    let k6 = f(lincomb(
        state,
        h,
        &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)],
    ));
    let next = lincomb(
        state,
        h,
        &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)],
    );
    let k7 = f(next);
    let err = lincomb(
        State::origin(),
        h,
        &[(E1, k1), (E3, k3), (E4, k4), (E5, k5), (E6, k6), (E7, k7)],
    );
    (next, (err.x1, err.x2))
}

fn error_norm(from: State, to: State, err: (f64, f64), tol: &Tolerances) -> f64 {
    let scale = |a: f64, b: f64| tol.abs_tol + tol.rel_tol * a.abs().max(b.abs());
    let e1 = err.0.abs() / scale(from.x1, to.x1);
    let e2 = err.1.abs() / scale(from.x2, to.x2);
    let e = e1.max(e2);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

/// One accepted Dormand-Prince step starting with trial size `dt_try`.
///
/// Rejected trials shrink the step until the scaled error norm is at most
/// one; shrinking below `tol.min_step` is a [`Error::SingularityStall`].
pub fn step_rk45(
    t: f64,
    state: State,
    spec: &ControllerSpec,
    dt_try: f64,
    tol: &Tolerances,
) -> Result<AdaptiveStep> {
    if !(dt_try > 0.0) {
        return Err(Error::invalid(
            "dt_try",
            format!("must be > 0, got {dt_try}"),
        ));
    }
    if !(tol.rel_tol > 0.0 && tol.abs_tol > 0.0) {
        return Err(Error::invalid(
            "tolerance",
            "rel_tol and abs_tol must be > 0",
        ));
    }
    let mut h = dt_try;
    loop {
        let (next, err) = dopri_trial(state, spec, h);
        let norm = error_norm(state, next, err, tol);
        if norm <= 1.0 && next.is_finite() {
            let factor = if norm == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            return Ok(AdaptiveStep {
                step: StepResult {
                    next_state: next,
                    dt_used: h,
                    error_estimate: norm,
                },
                dt_next: h * factor,
            });
        }
        let factor = if norm.is_finite() {
            (SAFETY * norm.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
        } else {
            MIN_FACTOR
        };
        h *= factor;
        if h < tol.min_step {
            return Err(Error::SingularityStall {
                t,
                state,
                min_step: tol.min_step,
            });
        }
    }
}

/// Explicit saturated-mode solution: constant acceleration `sign_v * S`
/// from `(x1_start, x2_start)` after elapsed time `t`,
/// `x1 = X1 + X2 t + sign_v S t^2 / 2`, `x2 = X2 + sign_v S t`.
pub fn simulate_saturated_closed_form(
    x1_start: f64,
    x2_start: f64,
    s: f64,
    sign_v: f64,
    t: f64,
) -> State {
    State {
        x1: x1_start + x2_start * t + sign_v * 0.5 * s * t * t,
        x2: x2_start + sign_v * s * t,
    }
}

/// Builds the recorded sample at `(t, state)`.
pub fn make_sample(t: f64, state: State, spec: &ControllerSpec) -> Sample {
    let out = control(state, spec);
    Sample {
        t,
        state,
        v_raw: out.v_raw,
        v: out.v,
        saturated: out.saturated,
        lyapunov: lyapunov(state, spec.k),
        lyapunov_rate: state.x2 * (spec.k * state.x1 + out.v),
    }
}

/// Saturation mode: 0 when unsaturated, otherwise the sign of the clamp.
fn mode_of(state: State, spec: &ControllerSpec) -> i8 {
    let out = control(state, spec);
    if out.saturated {
        sign(out.v_raw) as i8
    } else {
        0
    }
}

struct Stepper<'a> {
    spec: &'a ControllerSpec,
    kind: IntegratorKind,
    tol: Tolerances,
    dt: f64,
}

impl Stepper<'_> {
    /// Takes a step of `h_max`, which is either `h` or the (possibly slightly
    /// stretched) distance to the next sampling instant; returns the step and
    /// the size to try next.
    fn advance(&self, t: f64, state: State, h: f64, h_max: f64) -> Result<(StepResult, f64)> {
        let clipped = h_max < h;
        let h_try = h_max;
        match self.kind {
            IntegratorKind::Rk4 => Ok((step_rk4(t, state, self.spec, h_try)?, self.dt)),
            IntegratorKind::Rk45 => {
                let st = step_rk45(t, state, self.spec, h_try, &self.tol)?;
                if !st.step.next_state.is_finite() {
                    return Err(Error::IntegrationBlowup { t, state });
                }
                let next = if clipped {
                    st.dt_next.max(h)
                } else {
                    st.dt_next
                };
                Ok((st.step, next))
            }
        }
    }

    /// Uncontrolled step of exactly `h`, used while bisecting for events.
    fn fixed(&self, state: State, h: f64) -> State {
        match self.kind {
            IntegratorKind::Rk4 => rk4_raw(state, self.spec, h),
            IntegratorKind::Rk45 => dopri_trial(state, self.spec, h).0,
        }
    }

    fn initial_step(&self, state: State, cfg: &SimulationConfig) -> f64 {
        match self.kind {
            IntegratorKind::Rk4 => self.dt,
            IntegratorKind::Rk45 => {
                let f = derivative(state, self.spec);
                let y = state.x1.abs().max(state.x2.abs());
                let fy = f.0.abs().max(f.1.abs());
                let h = if y > 0.0 && fy > 0.0 {
                    0.01 * y / fy
                } else {
                    cfg.sample_interval
                };
                h.max(10.0 * cfg.min_step).min(cfg.sample_interval)
            }
        }
    }
}

/// Integrates the closed loop from `config.initial` until `config.t_end`, or
/// until the Lyapunov value drops below `config.v_stop`.
///
/// Samples are recorded at multiples of `sample_interval`, at the final
/// instant, and at every change of saturation mode.
pub fn simulate(spec: &ControllerSpec, config: &SimulationConfig) -> Result<Trajectory> {
    spec.validate()?;
    config.validate()?;
    let stepper = Stepper {
        spec,
        kind: config.integrator,
        tol: Tolerances::from(config),
        dt: config.dt,
    };

    let mut t = 0.0;
    let mut state = config.initial;
    let mut mode = mode_of(state, spec);
    let mut samples = vec![make_sample(t, state, spec)];
    let mut h = stepper.initial_step(state, config);
    let mut next_index: u64 = 1;

    let below_stop = |s: State| config.v_stop > 0.0 && lyapunov(s, spec.k) < config.v_stop;

    while t < config.t_end && !below_stop(state) {
        let grid_t = (next_index as f64 * config.sample_interval).min(config.t_end);
        let remaining = grid_t - t;
        let h_max = if remaining <= h * (1.0 + STRETCH) {
            remaining
        } else {
            h
        };
        let (step, h_next) = stepper.advance(t, state, h, h_max)?;

        let mut dt_used = step.dt_used;
        let mut next_state = step.next_state;
        let mut new_mode = mode_of(next_state, spec);
        let mut is_event = false;
        if new_mode != mode {
            let (mut lo, mut hi) = (0.0, dt_used);
            while hi - lo > EVENT_TIME_TOLERANCE {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if mode_of(stepper.fixed(state, mid), spec) == mode {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if hi < dt_used {
                next_state = stepper.fixed(state, hi);
                dt_used = hi;
            }
            new_mode = mode_of(next_state, spec);
            is_event = true;
        }
        if !next_state.is_finite() {
            return Err(Error::IntegrationBlowup { t, state });
        }

        let on_grid = dt_used == remaining;
        t = if on_grid { grid_t } else { t + dt_used };
        state = next_state;
        mode = new_mode;
        h = h_next;
        if on_grid && grid_t < config.t_end {
            next_index += 1;
        }

        if is_event || on_grid || t >= config.t_end || below_stop(state) {
            samples.push(make_sample(t, state, spec));
        }
    }

    Ok(Trajectory {
        controller: *spec,
        config: *config,
        samples,
    })
}
