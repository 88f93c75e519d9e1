//! Set-point control of a double integrator with an optimal nonlinear
//! damping law and a critically damped linear baseline.
//!
//! * [`model`] holds the shared value types.
//! * [`controllers`] evaluates the control laws and the amplitude clamp.
//! * [`integrator`] integrates the closed loop and records trajectories.
//! * [`analysis`] checks stability, passivity and convergence properties and
//!   extracts metrics from trajectories.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod controllers;
pub mod error;
pub mod integrator;
pub mod model;

pub use error::{Error, Result};
pub use model::{
    AnalysisReport, ControllerSpec, DampingLaw, DecayFit, DecayModel, IntegratorKind, PolyFit,
    Sample, Saturation, SimulationConfig, State, Trajectory,
};
