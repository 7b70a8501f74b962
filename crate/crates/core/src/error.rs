use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-normalizable equilibrium: {0}")]
    NonNormalizable(String),

    #[error("integral did not converge: {0}")]
    NonConvergent(String),

    #[error("contraction bound not reached after {attempts} attempts ({detail})")]
    Contraction { attempts: usize, detail: String },

    #[error("inconsistent homogeneous pair: Wronskian relative spread {spread:.3e}")]
    WronskianSpread { spread: f64 },

    #[error("trajectory {index} diverged at step {step}")]
    Diverged { index: u64, step: u64 },

    #[error("{diverged} of {total} trajectories diverged; reduce dt (currently {dt})")]
    EnsembleDiverged { diverged: usize, total: usize, dt: f64 },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("incompatible request: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
