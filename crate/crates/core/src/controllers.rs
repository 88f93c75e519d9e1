//! Control laws evaluated at a single state.

use crate::error::{Error, Result};
use crate::model::{ControllerSpec, DampingLaw, Saturation, State};

/// Control value produced by [`control`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Applied (clamped) control.
    pub v: f64,
    pub v_raw: f64,
    pub saturated: bool,
}

/// Sign with `sign(0) = 0`.
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Linear damping that places a real double pole at `-sqrt(k)`: `d = 2 sqrt(k)`.
pub fn critical_gain(k: f64) -> Result<f64> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Domain(format!("critical gain needs k > 0, got {k}")));
    }
    Ok(2.0 * k.sqrt())
}

pub fn linear_control(state: State, k: f64, d: f64) -> f64 {
    -k * state.x1 - d * state.x2
}

/// Nonlinear damping term `min(x2^2 / max(|x1|, eps), cap) * sign(x2)`.
pub fn nonlinear_damping(state: State, epsilon_reg: f64, damping_cap: f64) -> f64 {
    if state.x2 == 0.0 {
        return 0.0;
    }
    let magnitude = (state.x2 * state.x2 / state.x1.abs().max(epsilon_reg)).min(damping_cap);
    magnitude * sign(state.x2)
}

/// Proportional feedback plus the nonlinear damping term.
///
/// Outside the regularized band (`|x1| >= eps`, uncapped damping) this is the
/// exact law `-k x1 - x2^2 |x1|^-1 sign(x2)`.
pub fn nonlinear_control(state: State, spec: &ControllerSpec) -> f64 {
    -spec.k * state.x1 - nonlinear_damping(state, spec.epsilon_reg, spec.damping_cap)
}

/// Clamps `v_raw` to `[-S, S]`. Reaching the limit exactly is not saturation.
pub fn saturate(v_raw: f64, saturation: Saturation) -> (f64, bool) {
    match saturation {
        Saturation::Unbounded => (v_raw, false),
        Saturation::Bounded(s) => (v_raw.clamp(-s, s), v_raw.abs() > s),
    }
}

pub fn control(state: State, spec: &ControllerSpec) -> ControlOutput {
    let v_raw = match spec.law {
        DampingLaw::None => -spec.k * state.x1,
        DampingLaw::Linear => linear_control(state, spec.k, spec.d),
        DampingLaw::Nonlinear => nonlinear_control(state, spec),
    };
    let (v, saturated) = saturate(v_raw, spec.saturation);
    ControlOutput {
        v,
        v_raw,
        saturated,
    }
}
