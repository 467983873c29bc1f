use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("drift does not vanish at the origin: |b(0)| = {norm:e}")]
    NonzeroFixedPoint { norm: f64 },

    #[error("dissipativity check failed: min ratio {min_ratio} below claimed delta {delta}")]
    DissipativityViolation { min_ratio: f64, delta: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("eigenvalue {re}{im:+}i has real part at or below the stability tolerance")]
    EigenvalueInStability { re: f64, im: f64 },

    #[error(
        "ambiguous Jordan structure near eigenvalue {re}{im:+}i: a rank decision fell inside the tolerance band (value {value:e})"
    )]
    DefectiveAmbiguity { re: f64, im: f64, value: f64 },

    #[error("deterministic flow did not enter the ball of radius {radius} before t = {horizon}")]
    FlowDidNotEnter { radius: f64, horizon: f64 },

    #[error("stable index alpha = {0} outside (0, 2]")]
    InvalidAlpha(f64),

    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),

    #[error("step size {dt} too large: {reason}")]
    StepSizeTooLarge { dt: f64, reason: String },

    #[error("non-finite state in trajectory {trajectory} at step {step}")]
    NonFiniteState { trajectory: usize, step: usize },

    #[error("assignment size {n} exceeds the configured cap {cap}")]
    SizeCapExceeded { n: usize, cap: usize },

    #[error("assignment requires equal sample counts with uniform weights")]
    UnequalWeights,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("no cutoff profile: {0}")]
    NoProfile(String),

    #[error("insufficient signal for a profile fit: {usable} usable points, {required} required")]
    InsufficientSignal { usable: usize, required: usize },
}
