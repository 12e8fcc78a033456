use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported group: {0}")]
    UnsupportedGroup(String),
    #[error("generator basis is not linearly independent (singular Gram matrix)")]
    SingularBasis,
    #[error("metric is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("rational exponential approximant has a singular denominator; reduce the step size")]
    SingularDenominator,
    #[error("retraction refused: membership defect {defect:.3e} exceeds {limit:.1e}")]
    RetractionRefused { defect: f64, limit: f64 },
    #[error("invalid reductive split: {0}")]
    InvalidSplit(String),
    #[error("geodesic flow unavailable: {0}")]
    GeodesicUnavailable(String),
    #[error("integration produced a non-finite state: {0}")]
    NonFinite(String),
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("potential is not right-K-invariant: max vertical derivative {max_violation:.3e}")]
    NotKInvariant { max_violation: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
