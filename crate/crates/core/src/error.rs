//! Crate-wide error type.

use thiserror::Error;

/// Errors shared by every layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix entries must be finite")]
    NonFinite,

    #[error("matrix is not Hermitian within {tol}: deviation {deviation}")]
    NonHermitian { deviation: f64, tol: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue}")]
    NotCompletelyPositive { eigenvalue: f64 },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("factor index {index} out of range for {count} factors")]
    InvalidFactor { index: usize, count: usize },

    #[error("empty Kraus list")]
    EmptyKraus,

    #[error("invalid classical set: {0}")]
    InvalidClassicalSet(String),

    #[error("unknown classical label {0:?}")]
    UnknownLabel(String),

    #[error("map is not normalised (trace-preserving): deviation {deviation}")]
    NotNormalised { deviation: f64 },

    #[error("map is not pure: Choi rank {rank}")]
    NotPure { rank: usize },

    #[error("graph contains a directed cycle")]
    CyclicGraph,

    #[error("invalid identifier {0:?}: must be non-empty and free of ':;>#|,' and whitespace")]
    InvalidIdentifier(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid diagram: {0}")]
    InvalidDiagram(String),

    #[error("definite scenario is not compatible: {0}")]
    NotCompatible(String),

    #[error("enumeration bound {bound} exceeds cap {cap}")]
    EnumerationCapExceeded { bound: u128, cap: u128 },

    #[error("controlled-process equations violated: deviation {deviation}")]
    ControlEquationViolated { deviation: f64 },

    #[error("phase extraction failed: {0}")]
    PhaseExtraction(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("measurement is not unbiased: {0}")]
    BiasedMeasurement(String),

    #[error("unknown key {0:?}")]
    UnknownKey(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
