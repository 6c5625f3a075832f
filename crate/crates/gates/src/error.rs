//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("row {row}: treatment value {value:?} is not 0 or 1")]
    NonBinaryTreatment { row: usize, value: String },
    #[error("row {row}: {field} is not a finite number")]
    NonFiniteField { row: usize, field: String },
    #[error("row {row}: covariate vector has length {got}, expected {expected}")]
    CovariateLengthMismatch { row: usize, got: usize, expected: usize },
    #[error("each arm needs at least 2 units, got n1={n1}, n0={n0}")]
    ArmTooSmall { n1: usize, n0: usize },

    #[error("alpha must be in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("covariate index {j} out of range for dimension {d}")]
    CovariateIndexOutOfRange { j: usize, d: usize },
    #[error("cost function returned a non-finite value at p={p} for unit {id}")]
    CostFnNonFinite { p: f64, id: String },

    #[error("{0}")]
    InvalidConfig(String),
    #[error(
        "power boundary requires 0 <= k < 1/2, got k={0}: by the law of the iterated \
         logarithm a Wiener path exceeds gamma*t^k infinitely often near t=0 for any \
         gamma when k >= 1/2, so no finite coefficient attains the coverage target"
    )]
    InvalidPowerExponent(f64),
    #[error("boundary coefficient {name} must be finite and >= 0, got {value}")]
    InvalidCoefficient { name: &'static str, value: f64 },
    #[error("boundary shape requires a {expected:?} path batch, got {got:?}")]
    ProcessMismatch {
        expected: crate::engine::Process,
        got: crate::engine::Process,
    },
    #[error("line search for the feasibility corner exceeded the cap of {cap}")]
    SearchCapExceeded { cap: f64 },
    #[error(
        "calibration validation shortfall: independent-seed non-crossing probability \
         {achieved:.4} is below the required {required:.4}"
    )]
    ValidationShortfall { achieved: f64, required: f64 },

    #[error("band family {band} cannot be applied to a {curve} curve")]
    FamilyMismatch { band: String, curve: String },
    #[error("band grid is not aligned to the curve grid")]
    GridMismatch,
    #[error("selection constraint excludes every grid point")]
    EmptyConstraint,

    #[error("sample size must be even for balanced arms, got n={0}")]
    OddSampleSize(usize),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
