use thiserror::Error;

use crate::process::PlantParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("unsupported control structure: {reason}{}", fmt_params(.params))]
    UnsupportedStructure {
        reason: String,
        params: Option<PlantParams>,
    },

    #[error("model invalidated: {0}")]
    ModelInvalidated(String),

    #[error("timeout: stop condition not reached before t_max = {t_max} h{}", fmt_params(.params))]
    Timeout {
        t_max: f64,
        params: Option<PlantParams>,
    },

    #[error("stalled: non-positive permeate flux {flux} L/h at t = {t} h{}", fmt_params(.params))]
    Stall {
        t: f64,
        flux: f64,
        params: Option<PlantParams>,
    },

    #[error("infeasible terminal condition: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_params(p: &Option<PlantParams>) -> String {
    match p {
        Some(p) => format!(" (p = [{}, {}, {}])", p.p1, p.p2, p.p3),
        None => String::new(),
    }
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ModelInvalidated(_) => 3,
            Error::Timeout { .. } | Error::Stall { .. } => 4,
            _ => 2,
        }
    }

    /// Attach the offending parameter vector to simulation failures.
    pub fn with_params(self, p: PlantParams) -> Self {
        match self {
            Error::Timeout { t_max, .. } => Error::Timeout {
                t_max,
                params: Some(p),
            },
            Error::Stall { t, flux, .. } => Error::Stall {
                t,
                flux,
                params: Some(p),
            },
            Error::UnsupportedStructure { reason, .. } => Error::UnsupportedStructure {
                reason,
                params: Some(p),
            },
            other => other,
        }
    }

    pub(crate) fn unsupported(reason: impl Into<String>) -> Self {
        Error::UnsupportedStructure {
            reason: reason.into(),
            params: None,
        }
    }

    pub fn is_simulation_failure(&self) -> bool {
        matches!(
            self,
            Error::Timeout { .. }
                | Error::Stall { .. }
                | Error::UnsupportedStructure { .. }
                | Error::Infeasible(_)
        )
    }
}
