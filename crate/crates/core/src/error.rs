//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong when building populations, designs,
/// estimates, allocations, or reports.
#[derive(Debug, Error)]
pub enum Error {
    /// A time grid (or a derived quantity needing one) is too short.
    #[error("time grid needs at least {min} points, got {got}")]
    GridTooShort { min: usize, got: usize },

    /// Grid points must be finite and strictly increasing.
    #[error("time grid must be finite and strictly increasing (violated at index {index})")]
    GridNotIncreasing { index: usize },

    /// A vector of per-grid-point values has the wrong length.
    #[error("expected {expected} values on the grid, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// Evaluation time outside the observation window.
    #[error("t = {t} lies outside the observation window [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    /// A unit index beyond the population / design size.
    #[error("unit index {index} out of range for size {size}")]
    UnitOutOfRange { index: usize, size: usize },

    /// A sample or design built for one population size applied to another.
    #[error("design is over {design} units but the population has {population}")]
    PopulationMismatch { design: usize, population: usize },

    /// Catch-all for invalid caller-supplied parameters.
    #[error("{0}")]
    InvalidArgument(String),

    /// Malformed population CSV; `line` is 1-based.
    #[error("population file, line {line}: {message}")]
    CsvParse { line: usize, message: String },

    /// An operation needed stratum labels the population does not carry.
    #[error("population carries no stratum labels")]
    MissingStrata,

    /// A stratum with fewer units than the operation requires.
    #[error("stratum {stratum} has {size} unit(s), but at least {min} are required")]
    DegenerateStratum { stratum: usize, size: usize, min: usize },

    /// Variance estimation requires at least two draws per stratum.
    #[error(
        "variance is not estimable: stratum {stratum} draws {sample_size} unit(s), \
         joint inclusion probabilities vanish below 2"
    )]
    VarianceInestimable { stratum: usize, sample_size: usize },

    /// Exhaustive sample enumeration would exceed the safety cap.
    #[error("sample space holds {count} samples, above the enumeration cap of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },

    /// No integer allocation can satisfy the constraints.
    #[error("no feasible allocation: {0}")]
    InfeasibleAllocation(String),

    /// A band was requested from an estimate that has no variance function.
    #[error("estimate carries no variance function; build it with variance enabled")]
    MissingVariance,

    /// Underlying I/O failure (file read/write).
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed JSON configuration or report.
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand used throughout for parameter validation.
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
