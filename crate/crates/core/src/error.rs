use thiserror::Error;

use crate::model::State;

/// Errors raised by construction, integration and analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration blew up at t={t}: next step from state ({:e}, {:e}) is not finite", .state.x1, .state.x2)]
    IntegrationBlowup { t: f64, state: State },

    #[error("step size fell below {min_step:e} at t={t}, state ({:e}, {:e})", .state.x1, .state.x2)]
    SingularityStall { t: f64, state: State, min_step: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Time at which an integration failure occurred, if this is one.
    pub fn failure_time(&self) -> Option<f64> {
        match self {
            Error::IntegrationBlowup { t, .. } | Error::SingularityStall { t, .. } => Some(*t),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
