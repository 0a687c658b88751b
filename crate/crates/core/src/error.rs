use thiserror::Error;

/// Errors raised while building lattices or running the backward solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid market parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },

    #[error("default probability lambda0*dt = {lambda_dt} >= 1 at step {step}; increase n_steps or lower the intensity")]
    IntensityTooLarge { step: usize, lambda_dt: f64 },

    #[error("price factor {factor} <= 0 on a branch at step {step}; increase n_steps or shrink the coefficients")]
    NegativePriceFactor { step: usize, factor: f64 },

    #[error("asset prices do not recombine at step {step} (per-step coefficients must keep the lattice recombining)")]
    NonRecombining { step: usize },

    #[error("unknown lattice node {0}")]
    UnknownNode(usize),

    #[error("singular representation system at node {node}")]
    SingularSystem { node: usize },

    #[error("implicit step is not a contraction (C*dt = {lipschitz_dt}); refine the time grid")]
    StepContractionFailure { lipschitz_dt: f64 },

    #[error("invalid control value {value}: controls must satisfy -1 < nu <= nu_max = {upper}")]
    InvalidControl { value: f64, upper: f64 },

    #[error("invalid control grid: {0}")]
    InvalidGrid(String),

    #[error("terminal value below obstacle at node {node}")]
    TerminalBelowObstacle { node: usize },

    #[error("process below obstacle at node {node}")]
    ObstacleViolation { node: usize },

    #[error("field has {got} values but the lattice has {expected} nodes")]
    FieldSizeMismatch { expected: usize, got: usize },

    #[error("non-finite value in {what} at node {node}")]
    NonFinite { what: &'static str, node: usize },

    #[error("invalid path: {0}")]
    InvalidPath(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
