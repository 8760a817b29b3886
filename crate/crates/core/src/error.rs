use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A named parameter failed validation.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A NaN or infinity showed up in a forward or backward pass.
    #[error("non-finite value in {context} at layer {layer}")]
    NonFiniteLayer { context: &'static str, layer: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Operation called with the wrong discriminator loss kind.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed parameter file: {0}")]
    Format(String),

    /// A failure inside training, tagged with the outer iteration.
    #[error("iteration {iteration}: {source}")]
    AtIteration { iteration: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for failures that come from the numerics rather than from bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::AtIteration { source, .. } => source.is_numeric(),
            other => matches!(other, Error::NonFiniteLayer { .. } | Error::Numeric(_)),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
