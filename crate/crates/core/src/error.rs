use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate extent on axis {axis}: [{lower}, {upper}]")]
    DegenerateExtent { axis: usize, lower: f64, upper: f64 },

    #[error("resolution {0} is below the minimum of 3 nodes per axis")]
    ResolutionTooSmall(usize),

    #[error("unsupported dimension {0} (expected 1 or 2)")]
    UnsupportedDimension(usize),

    #[error("field and kernel/operator live on different grids")]
    GridMismatch,

    #[error("field has {got} values, grid has {expected} nodes")]
    FieldLength { expected: usize, got: usize },

    #[error("averaging radius must be positive, got {0}")]
    NonPositiveRadius(f64),

    #[error("averaging radius {theta} does not reach any neighbour (cell width {h})")]
    RadiusBelowResolution { theta: f64, h: f64 },

    #[error("diffusion matrix is not nonnegative definite at node {node} (min eigenvalue {min_eigenvalue})")]
    IndefiniteDiffusion { node: usize, min_eigenvalue: f64 },

    #[error("linear solve failed: zero pivot at row {row}")]
    SingularSystem { row: usize },

    #[error("non-finite state at step {step} on path {path}")]
    NonFinite { step: usize, path: usize },

    #[error("invalid Levy model: {0}")]
    InvalidLevy(String),

    #[error("control value {value} outside admissible set [{lower}, {upper}]")]
    ControlOutOfBounds { value: f64, lower: f64, upper: f64 },

    #[error("{what} undefined for argument {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all {0} paths were rejected (terminal state outside the state set)")]
    AllPathsRejected(usize),

    #[error("adjoint required to be positive but {what} = {value}")]
    NonPositiveAdjoint { what: &'static str, value: f64 },

    #[error("optimizer diverged at iteration {0}")]
    Diverged(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
