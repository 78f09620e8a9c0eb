use thiserror::Error;

/// Errors produced by trajectory algebra, energies, samplers and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} out of range (len {len})")]
    Index { what: &'static str, index: usize, len: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },

    #[error("gradient explosion at diffusion step {step} (|grad| = {norm:e})")]
    Explosion { step: usize, norm: f64 },

    #[error("infeasible scenario: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Index { .. } => "index",
            Error::Input(_) => "input",
            Error::Shape { .. } => "shape",
            Error::Explosion { .. } => "explosion",
            Error::Infeasible(_) => "infeasible",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
