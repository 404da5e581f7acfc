use num_complex::Complex64;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by configuration validation, solvers, and samplers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// The Gaussian mean derivative of a nonlinearity underflowed; the
    /// normalization that divides by it is undefined.
    #[error("nonlinearity {name:?} has |<g'>| = {mean_derivative:e} < 1e-12; normalization undefined")]
    DegenerateNonlinearity { name: String, mean_derivative: f64 },

    #[error("unknown nonlinearity {0:?}")]
    UnknownNonlinearity(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// No admissible root of the spectral quartic at the requested abscissa.
    #[error("no admissible spectral root at x = {x}: roots {roots:?}")]
    SpectralRoot { x: f64, roots: Vec<Complex64> },

    /// Every kernel eigenvalue fell below the rank threshold.
    #[error("degenerate kernel: no eigenvalue above {threshold:e}")]
    DegenerateKernel { threshold: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
