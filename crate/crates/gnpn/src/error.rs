//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. The variants
//! are deliberately fine-grained so that callers (and the C ABI layer) can
//! react to individual failure modes instead of string-matching messages.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A Cholesky-style factorization hit a non-positive pivot.
    #[error("matrix is not positive definite: pivot {pivot:e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// The symmetric eigenvalue iteration did not converge.
    #[error("eigenvalue iteration did not converge within {0} sweeps")]
    IterationLimit(usize),

    /// A covariance matrix carried a zero or negative variance on its diagonal.
    #[error("non-positive variance {value:e} at diagonal index {index}")]
    NonPositiveVariance { index: usize, value: f64 },

    /// Two containers that must agree in dimension did not.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A matrix read from external input was not symmetric within tolerance.
    #[error("entry ({i},{j}) breaks symmetry: {upper:e} vs {lower:e}")]
    AsymmetricInput { i: usize, j: usize, upper: f64, lower: f64 },

    /// A rejection-sampling generator ran out of attempts.
    #[error("generator gave up after {0} attempts")]
    RetriesExhausted(usize),

    /// A branching process died out before producing enough nodes.
    #[error("branching process died out at {reached} of {target} nodes")]
    DegenerateTree { reached: usize, target: usize },

    /// A transform was requested by a name this crate does not know.
    #[error("unknown transform name `{0}`")]
    UnknownTransform(String),

    /// Adaptive quadrature failed to stabilize within the node budget.
    #[error("quadrature did not reach relative tolerance {tol:e} within {max_nodes} nodes")]
    QuadratureFailure { tol: f64, max_nodes: usize },

    /// A series evaluation was asked of a transform that only supports
    /// pointwise evaluation.
    #[error("transform `{0}` has no derivative sequence")]
    NoDerivativeSequence(String),

    /// A series did not settle below tolerance within the term budget,
    /// which signals that the transform's derivative growth is too fast
    /// for the expansion to converge at the requested point.
    #[error("series did not converge within {max_terms} terms (last term {last_term:e})")]
    SeriesDivergence { max_terms: usize, last_term: f64 },

    /// Bivariate-normal parameters with |cov| exceeding the variance bound.
    #[error("invalid covariance: |{s_ij:e}| exceeds sqrt({s_ii:e} * {s_jj:e})")]
    InvalidCovariance { s_ii: f64, s_jj: f64, s_ij: f64 },

    /// A sample column with zero variance cannot be normalized.
    #[error("column {0} has zero sample variance")]
    DegenerateColumn(usize),

    /// Too few observations for the requested estimate.
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    /// The empirical correlation matrix could not be inverted.
    #[error("empirical correlation matrix is singular")]
    SingularCorrelation,

    /// The spectral-norm gate rejected the input in strict mode.
    #[error("applicability check failed: ||R - I|| = {norm} >= 1")]
    ApplicabilityFailed { norm: f64 },

    /// The knee detector confirmed no knee.
    #[error("no knee found in the magnitude curve")]
    NoKnee,

    /// Malformed configuration or CLI input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
