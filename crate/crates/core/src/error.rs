use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("generator must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("generator must have at least one state")]
    Empty,
    #[error("generator entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("negative off-diagonal rate {value} at ({row}, {col})")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, tolerance {tol}")]
    RowSumNonzero { row: usize, sum: f64, tol: f64 },
    #[error("generator is reducible: {0}")]
    Reducible(String),
    #[error("stationary distribution mismatch: {0}")]
    PiMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("observable not mean-zero: pi-mean {mean:e}, tolerance {tol:e}")]
    NotMeanZero { mean: f64, tol: f64 },
    #[error("symmetric eigensolver did not converge")]
    EigSolverFailure,
    #[error("vector has a kernel component of size {component} (tolerance {tol})")]
    KernelComponent { component: f64, tol: f64 },
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("operator is not skew: asymmetry {asymmetry}")]
    NotSkew { asymmetry: f64 },
    #[error("grading invalid: {0}")]
    InvalidGrading(String),
    #[error("grading not respected: {0}")]
    GradingNotRespected(String),
    #[error("S restricted to level {level} is singular (eigenvalue {eigenvalue})")]
    SingularLevelS { level: usize, eigenvalue: f64 },
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory horizon {horizon} shorter than requested time {requested}")]
    HorizonTooShort { horizon: f64, requested: f64 },
    #[error("model has negative rates and cannot be simulated")]
    NotMarkov,
}
