use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("field length {got} does not match grid size {expected}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("grid mismatch between fields")]
    GridMismatch,

    #[error("non-finite value encountered at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },

    #[error("quadrature did not converge: estimated error {estimate:e}")]
    Quadrature { estimate: f64 },

    #[error("history does not reach back to t = {requested} (oldest stored t = {oldest})")]
    HistoryTooShort { requested: f64, oldest: f64 },

    #[error("snapshot gap: {0}")]
    MissingSnapshots(String),

    #[error("scale not representable for n = {n}: {reason}")]
    Unrepresentable { n: u32, reason: String },

    #[error("under-resolved bump: m·h = {mh} > 1")]
    UnderResolved { mh: f64 },

    #[error("no scaling range: {0}")]
    NoScalingRange(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
