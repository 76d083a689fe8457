use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("kernel entry {entry} has degree {degree}, exceeding the embedding width {width}")]
    DegreeOverflow {
        entry: usize,
        degree: usize,
        width: usize,
    },

    #[error("kernel pattern has no free coefficients")]
    EmptyKernel,

    #[error("perturbation structure has no free coefficients")]
    RigidStructure,

    #[error("invalid pivot: {0}")]
    InvalidPivot(String),

    #[error("kernel vector is numerically zero")]
    ZeroVector,

    #[error("kernel columns are numerically dependent")]
    DependentColumns,

    #[error("requested kernel dimension {requested} is not below the embedding width {width}")]
    KernelDimension { requested: usize, width: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("singular linear system")]
    Singular,

    #[error("solver diverged: {0}")]
    Diverged(String),
}
