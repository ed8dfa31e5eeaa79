use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent vector/matrix shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A ratio whose denominator vanished (e.g. 2SLS at a zero first stage).
    #[error("degenerate: {0}")]
    Degenerate(String),
    /// A factorization or inversion failed or was numerically unreliable.
    #[error("conditioning: {0}")]
    Conditioning(String),
    /// Malformed or missing user input.
    #[error("input error: {0}")]
    Input(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status for this error: 2 for input problems, 3 for
    /// numerical or conditioning failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Io(_) | Error::Domain(_) | Error::Unsupported(_) => 2,
            Error::Dimension(_) | Error::Degenerate(_) | Error::Conditioning(_) => 3,
        }
    }
}
