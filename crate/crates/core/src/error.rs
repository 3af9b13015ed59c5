use crate::training::LossHistory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("no samples left after edge masking")]
    EmptyAfterMask,

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        history: LossHistory,
    },

    /// Malformed or incompatible input files.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFault(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
