use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive semi-definite (pivot {pivot:e} at index {index})")]
    NotPositiveSemiDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error("invalid variance {0}")]
    InvalidVariance(f64),
    #[error("densities are defined on different grids")]
    GridMismatch,
    #[error("no samples supplied")]
    EmptySamples,
    #[error("map is not invertible near {0}")]
    NonInvertibleMap(f64),
    #[error("operation needs a stochastic model (non-zero model noise)")]
    ZeroModelNoise,
    #[error("operation needs deterministic dynamics")]
    StochasticModel,
    #[error("posterior underflows on every grid node")]
    DegeneratePosterior,
    #[error("singular precision matrix in block {0}")]
    SingularPrecision(usize),
    #[error("objective is not finite at the start point")]
    NonFiniteObjective,
    #[error("all particle weights vanished")]
    ZeroWeightSum,
    #[error("too many non-finite proposals ({count} of {steps})")]
    BlowUpLimit { count: usize, steps: usize },
    #[error("degenerate case: {0}")]
    DegenerateCase(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("compared runs do not share truth and data")]
    ConfigMismatch,
    #[error("rank histogram needs recorded ensembles")]
    NonEnsembleFilter,
    #[error("model is not linear")]
    NonLinearModel,
}

pub type Result<T> = std::result::Result<T, Error>;
