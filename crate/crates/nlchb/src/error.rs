//! Error type shared by all solver components.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: expected {expected:?}, got {got:?}")]
    GridMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("right-hand side has nonzero mean {mean:e} (norm {norm:e}); subtract the mean first")]
    NonZeroMean { mean: f64, norm: f64 },

    #[error("kernel produced negative a(x): min {min:e} against a* = {a_star:e}")]
    NegativeA { min: f64, a_star: f64 },

    #[error("hypothesis {hypothesis} violated: {detail}")]
    HypothesisViolated {
        hypothesis: &'static str,
        detail: String,
    },

    #[error("phase field left the validated range: |phi|_inf = {linf:e} > s_max = {s_max:e}")]
    RangeViolation { linf: f64, s_max: f64 },

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("{what} linear solve failed after {iterations} iterations (residual {residual:e})")]
    LinearSolveFailure {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("flow solver did not converge: {iterations} iterations, residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("permeability too small for the Darcy mode: min eta = {min:e}")]
    PermeabilityTooSmall { min: f64 },

    #[error("velocity is not discretely divergence-free: |div u| = {div_norm:e}, |u| = {vel_norm:e}")]
    NotDivergenceFree { div_norm: f64, vel_norm: f64 },

    #[error("{what} produced a non-finite value")]
    NonFinite { what: &'static str },

    #[error("kernel table: {0}")]
    KernelTable(String),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },

    #[error("config parse error: {0}")]
    ParseError(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("log-log slope undefined: an error value is zero or negative")]
    SlopeUndefined,

    #[error("time axis is not strictly increasing at t = {0}")]
    NonMonotoneTime(f64),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 hypothesis, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ParseError(_)
            | Error::Config(_)
            | Error::InvalidGrid(_)
            | Error::KernelTable(_)
            | Error::Snapshot(_)
            | Error::Io(_)
            | Error::MalformedRecord { .. } => 2,
            Error::HypothesisViolated { .. } => 3,
            _ => 4,
        }
    }
}
