use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("field does not match mesh: {0}")]
    MeshMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("level {t} outside field range ({min}, {max})")]
    LevelOutOfRange { t: f64, min: f64, max: f64 },
    #[error("matrix is not positive definite on cell {cell}")]
    NotPositiveDefinite { cell: usize },
    #[error("field must vanish on boundary nodes (node {node} has value {value})")]
    NonzeroBoundary { node: usize, value: f64 },
    #[error("field must be strictly positive (node {node} has value {value})")]
    NonPositive { node: usize, value: f64 },
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64, history: Vec<f64> },
    #[error("principal eigenvalue {lambda1:.6e} is not positive: operator is not subcritical on this mesh")]
    NotSubcritical { lambda1: f64 },
    #[error("criticality suspected: {0}")]
    CriticalitySuspected(String),
    #[error("singular linear system (pivot {pivot} at row {row})")]
    SingularSystem { row: usize, pivot: f64 },
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error("perturbation violates V1 >= -eps W on {} cells (first: {:?})", .cells.len(), .cells.first())]
    PerturbationTooNegative { cells: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, Error>;
