use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("operator is not Hermitian (relative deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("operator is not positive semidefinite (minimum eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("not a density operator: {0}")]
    NotDensity(String),

    #[error("not a quantum channel: {0}")]
    NotChannel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver failure: {0}")]
    Solver(String),

    /// The solver stopped without a certified answer; the bounds bracket the
    /// optimal value as far as the iterates allow.
    #[error("inaccurate solve: {message} (bounds [{lower:.6e}, {upper:.6e}])")]
    Inaccurate { message: String, lower: f64, upper: f64 },
}
