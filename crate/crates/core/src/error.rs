use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("a = {value} is outside the domain of alternative {alternative}: {reason}")]
    Domain {
        alternative: usize,
        value: f64,
        reason: &'static str,
    },

    #[error("income-effect condition fails (max spread {spread} > tol {tol}); rerun with force to override")]
    ConditionFailed { spread: f64, tol: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{0} noise has no closed-form choice probabilities; use the Monte Carlo simulator")]
    NoClosedForm(&'static str),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("point outside the grid hull along axis {axis}: {value} not in [{lo}, {hi}]")]
    OutsideHull {
        axis: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("degenerate denominator |{value:e}| below threshold {threshold:e}")]
    DegenerateDenominator { value: f64, threshold: f64 },

    #[error("rank-deficient least squares for the {basis} basis of degree {degree}: {detail}")]
    RankDeficient {
        basis: &'static str,
        degree: usize,
        detail: String,
    },

    #[error("ratio sample {value} at {location:?} is not positive; the log-polynomial basis needs positive ratios")]
    NonPositiveRatio { value: f64, location: Vec<f64> },

    #[error("not enough usable samples: {0}")]
    InsufficientSamples(String),

    #[error("ratio function is not finite and positive at (a_j = {aj}, a_0 = {a0})")]
    RatioEvaluation { aj: f64, a0: f64 },

    #[error("step underflow near x = {x}: local error {error:e} persists after halving")]
    StepUnderflow { x: f64, error: f64 },

    #[error("characteristics of alternative {alternative} do not cover the domain: {detail}")]
    Coverage { alternative: usize, detail: String },

    #[error("a_0 = {a0} is outside the characteristic coverage [{lo}, {hi}] at a_j = {aj}")]
    OutsideCoverage { aj: f64, a0: f64, lo: f64, hi: f64 },

    #[error("level {value} is outside the attained range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("root is not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NotBracketed {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("unnormalized density: mass {mass} outside [{lo}, {hi}]")]
    Unnormalized { mass: f64, lo: f64, hi: f64 },

    #[error("v = {v:?} is outside the reconstructed support: {reason}")]
    OutsideSupport { v: Vec<f64>, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
