use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("Gram loop numerically singular: minimum eigenvalue {min_eigenvalue:e} at sample {sample}")]
    SingularGram { sample: usize, min_eigenvalue: f64 },

    #[error("Cholesky breakdown at pivot {pivot} (pivot value {value:e})")]
    CholeskyBreakdown { pivot: usize, value: f64 },

    #[error("two-circle system is rank deficient: smallest singular value {smallest_singular_value:e}")]
    RankDeficient { smallest_singular_value: f64 },

    #[error("factorization failed at grid point {index} (z = {z}): {source}")]
    AtGridPoint {
        index: usize,
        z: Complex64,
        #[source]
        source: Box<Error>,
    },

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("degenerate fiber: {0}")]
    DegenerateFiber(String),

    #[error("ramification on |lambda| = 1 at {0}")]
    BoundaryRamification(Complex64),

    #[error("degenerate k-plane at z = {0:?}")]
    DegeneratePlane(Vec<Complex64>),

    #[error("divisor degree mismatch: {0}")]
    DivisorDegree(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn at_grid_point(self, index: usize, z: Complex64) -> Self {
        Error::AtGridPoint { index, z, source: Box::new(self) }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// True for failures of the loop factorizations (as opposed to bad input or I/O).
    pub fn is_factorization(&self) -> bool {
        match self {
            Error::SingularGram { .. } | Error::CholeskyBreakdown { .. } | Error::RankDeficient { .. } => true,
            Error::AtGridPoint { source, .. } => source.is_factorization(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
