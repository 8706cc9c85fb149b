use thiserror::Error;

/// Errors produced by the library.
///
/// Domain outcomes that are expected data (a divergent Laplace exponent, a
/// truncated Monte-Carlo tree) are reported through return values, not here.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "spectral radius did not converge within the iteration budget; \
         last Gelfand brackets {previous:?} then {last:?}"
    )]
    SpectralNonConvergence { previous: (f64, f64), last: (f64, f64) },

    #[error("no finite K exists: r = {r} is below the spectral radius {spectral_radius}")]
    NoFiniteGrowthConstant { r: f64, spectral_radius: f64 },

    #[error("|||A^n|||/r^n has not dropped to 1 by n = {n_max}; retry with a larger n_max")]
    DecayNotReached { n_max: usize },

    #[error("series diverges: spectral radius {0} >= 1")]
    SeriesDiverges(f64),

    #[error("singular linear system")]
    Singular,

    #[error("|u|_inf = {norm} is outside the guaranteed box t0 = {t0}")]
    OutsideGuaranteedBox { norm: f64, t0: f64 },

    #[error("boundary point, bound unavailable: spr(H diag(e^L)) = {0}")]
    BoundaryPoint(f64),

    #[error("no finite bound: the Laplace exponent is not finite")]
    NoFiniteBound,

    #[error(
        "spr(H) = {spectral_radius} >= 1 and u is not supported on the reduced type set \
         {reduced_types:?}; run reduce_types and study E on the reduced system"
    )]
    NotSubcritical { spectral_radius: f64, reduced_types: Vec<usize> },

    #[error("direction never reaches criticality: spr(H diag(e^(s y))) stays at {0} < 1")]
    NeverCritical(f64),

    #[error("boundary point has a negative coordinate: u = {0:?}")]
    NegativeBoundaryPoint(Vec<f64>),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("burn-in not determinable: {0}")]
    BurnIn(String),

    #[error("exp overflow at coordinate {coordinate} (x = {value})")]
    Overflow { coordinate: usize, value: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
