use thiserror::Error;

pub type Result<T, E = FairRankError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FairRankError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("membership row {row} is not a distribution: {reason}")]
    Membership { row: usize, reason: String },

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: String, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FairRankError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Self::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Self::Parse {
            line,
            msg: msg.into(),
        }
    }
}
