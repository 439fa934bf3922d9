use std::fmt;

/// Standing assumptions of the filter whose violation is reported as a
/// precondition failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// The noise spectrum is invertible wherever the measurement kernel carries energy.
    SpectrumInvertible,
    /// The spectral quotient behind the gain kernel is integrable.
    GainIntegrable,
    /// `(A, Q)` is stabilizable.
    Stabilizable,
    /// `(A, G)` is detectable.
    Detectable,
}

impl Assumption {
    pub fn number(self) -> u8 {
        match self {
            Assumption::SpectrumInvertible => 3,
            Assumption::GainIntegrable => 4,
            Assumption::Stabilizable => 6,
            Assumption::Detectable => 7,
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self {
            Assumption::SpectrumInvertible => "noise spectrum invertible on the measurement band",
            Assumption::GainIntegrable => "gain spectrum integrable",
            Assumption::Stabilizable => "(A, Q) stabilizable",
            Assumption::Detectable => "(A, G) detectable",
        };
        write!(f, "Assumption {} ({what})", self.number())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(
        "circulant embedding is not nonnegative (min eigenvalue {min:.3e}, max {max:.3e}); \
         enlarge the padding or sample a smaller grid densely"
    )]
    Embedding { min: f64, max: f64 },
    #[error("{assumption} violated: {detail}")]
    Precondition { assumption: Assumption, detail: String },
    #[error("matrix is not symmetric: relative asymmetry {asymmetry:.3e} exceeds {tolerance:.1e}")]
    Asymmetric { asymmetry: f64, tolerance: f64 },
    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:.3e}")]
    NotPsd { eigenvalue: f64 },
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("Riccati iteration did not converge after {iterations} iterations (last change {change:.3e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("dense model of size {size} exceeds cap {cap}; use a larger stride")]
    TooLarge { size: usize, cap: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn precondition(assumption: Assumption, detail: impl Into<String>) -> Self {
        Error::Precondition { assumption, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
