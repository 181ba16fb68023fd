use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("unsupported grid: dimension {dim}, resolution {res} ({reason})")]
    InvalidGrid {
        dim: usize,
        res: usize,
        reason: &'static str,
    },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("degree {degree} is out of range for {op}")]
    Degree { op: &'static str, degree: usize },
    #[error("wavevector {wavevector:?} aliases at resolution {res}")]
    Aliased { wavevector: Vec<i64>, res: usize },
    #[error("malformed component index {0:?}")]
    Component(Vec<usize>),
    #[error("metric is not positive definite at node {node}")]
    NotPositiveDefinite { node: usize },
    #[error("matrix {0:?} is not invertible over the integers")]
    NotUnimodular(Vec<i64>),
    #[error("{what} did not converge: residual {residual:e}")]
    NoConvergence { what: &'static str, residual: f64 },
    #[error("exact and odd data cannot be mixed")]
    KindMismatch,
    #[error("invalid twist: {0}")]
    InvalidTwist(String),
    #[error("not a derivation: defect {0:e}")]
    NotDerivation(f64),
    #[error("element list is not a group: {0}")]
    NotAGroup(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("resource guard exceeded: {0}")]
    TooLarge(String),
    #[error("{0}")]
    Uncertified(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;
