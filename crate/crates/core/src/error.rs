use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("outside domain: {0}")]
    Domain(String),

    #[error("engine mismatch: {0}")]
    EngineMismatch(String),

    #[error("policy {policy} needs {needs}, which this state view does not provide")]
    Capability { policy: String, needs: &'static str },

    #[error("simulation horizon is empty")]
    EmptyHorizon,

    #[error("integration failed at step {step}: {reason}")]
    Integration { step: usize, reason: String },

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("unstable system: {0}")]
    Unstable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
