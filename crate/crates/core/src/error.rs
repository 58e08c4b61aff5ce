//! Crate-wide error type.

use thiserror::Error;

/// A set of mutually contradictory constraints found while solving the share
/// QP. Lists human-readable labels of a violating constraint subset.
#[derive(Debug, Clone)]
pub struct InfeasibilityCertificate {
    pub constraints: Vec<String>,
}

impl std::fmt::Display for InfeasibilityCertificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "contradictory constraint subset: [")?;
        for (i, c) in self.constraints.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error in {file}: {message}")]
    Parse { file: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("no path shares for OD {origin}-{dest} in interval {interval}")]
    MissingShare {
        origin: String,
        dest: String,
        interval: u32,
    },

    #[error("unservable path: {0}")]
    Unservable(String),

    #[error("delay rate missing for demanded variable {0}")]
    MissingDelayRate(String),

    #[error("infeasible constraint system: {certificate}")]
    Infeasible { certificate: InfeasibilityCertificate },

    #[error("likelihood unbounded; recession direction {direction:?}")]
    Divergence { direction: [f64; 4] },

    #[error("internal consistency error: {0}")]
    Internal(String),
}

impl Error {
    /// Module a failure originates from, for CLI diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Io { .. } | Error::Parse { .. } => "config",
            Error::Validation(_) => "domain",
            Error::MissingShare { .. } | Error::Unservable(_) | Error::MissingDelayRate(_) => {
                "loading"
            }
            Error::Infeasible { .. } => "qp",
            Error::Divergence { .. } => "clogit",
            Error::Internal(_) => "internal",
        }
    }

    /// True for failures of a solver rather than of the inputs.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Infeasible { .. } | Error::Divergence { .. } | Error::Internal(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
