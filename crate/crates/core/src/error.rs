use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("transition rate {from} -> {to} must be strictly positive, got {rate}")]
    NonPositiveRate { from: usize, to: usize, rate: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("payoff is undefined at occupancy zero")]
    OccupancyZero,

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid sharing function: {0}")]
    InvalidSharing(String),

    #[error("truncation level L = {0} is too small (need L >= 2)")]
    TruncationTooSmall(usize),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error(
        "arrival-rate bracket lost: phi({lo}) - beta = {f_lo:e}, phi({hi}) - beta = {f_hi:e}; \
         truncation level is probably too small"
    )]
    NoBracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("{what} did not converge after {iterations} iterations (last change {last_delta:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last_delta: f64,
    },

    #[error("continuation value increases in n at state z={z}, n={n} by {excess:e}")]
    MonotonicityViolation { z: usize, n: usize, excess: f64 },

    #[error("lower value bound underflows to zero")]
    DegenerateLowerBound,

    #[error("invalid finite system: {0}")]
    InvalidSystem(String),
}
