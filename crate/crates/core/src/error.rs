use thiserror::Error;

/// Errors raised by the grid numerics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("measures live on different grids")]
    GridMismatch,

    #[error("raw weights sum to zero")]
    AllZero,

    #[error("non-finite entry at index {idx}")]
    NonFinite { idx: usize },

    #[error("negative entry at index {idx}: {value}")]
    Negative { idx: usize, value: f64 },

    #[error("support violation at index {idx}: reference vanishes where the measure does not")]
    SupportViolation { idx: usize },

    #[error("zero density at index {idx}; mollify before taking Fisher information")]
    ZeroDensity { idx: usize },

    #[error("grid with {points} points exceeds the exhaustive budget of {budget}")]
    GridTooLarge { points: usize, budget: usize },

    #[error("mode {mode} carries no derivative samples")]
    MissingDerivatives { mode: usize },

    #[error("R-domination violated by {excess:e} at y-index {y_index} (sample {sample})")]
    DominationViolated {
        sample: usize,
        y_index: usize,
        excess: f64,
    },

    #[error("exponent {exponent} exceeds the overflow guard of 700")]
    Overflow { exponent: f64 },

    #[error("target {target:?} is outside the image of the Helmholtz gradient")]
    OutOfImage { target: Vec<f64> },

    #[error("bracket [{lo}, {hi}] does not enclose every root")]
    BracketTooNarrow { lo: f64, hi: f64 },

    #[error("sampled third derivative turns positive at l = {at} ({value:e})")]
    NotGhs { at: f64, value: f64 },

    #[error("alpha = {alpha} outside [1, sqrt(J_c/J)) = [1, {limit})")]
    AlphaOutOfRange { alpha: f64, limit: f64 },

    #[error("state space of {states} configurations exceeds the cap of {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("configuration distribution is not exchangeable")]
    NotSymmetric,

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    UnstableStep { dt: f64, bound: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
