//! Crate-wide error type and the coarse failure classes the CLI maps to
//! exit codes.

use std::path::PathBuf;

/// Coarse failure class, used by the CLI for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid configuration or request (bad dimensions, bad flags).
    Config,
    /// File access or file format problems.
    Io,
    /// Numerical breakdown (singular systems, non-finite values, blow-up).
    Numeric,
}

#[derive(Debug, thiserror::Error)]
pub enum QmError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 8],
        found: [u8; 8],
    },
    #[error("{path}: truncated, needed {needed} bytes but file holds {got}")]
    Truncated { path: PathBuf, needed: u64, got: u64 },
    #[error("matrix size {rows} x {cols} overflows the addressable range")]
    SizeOverflow { rows: u64, cols: u64 },
    #[error("{path}: non-finite value at entry {index}")]
    NonFiniteRead { path: PathBuf, index: u64 },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimMismatch {
        context: String,
        expected: String,
        found: String,
    },
    #[error("matrix must have at least one row and one column, got {rows} x {cols}")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("singular-vector index {index} out of range 1..={ell}")]
    IndexOutOfRange { index: usize, ell: usize },
    #[error("singular-vector index {index} is already selected")]
    AlreadySelected { index: usize },
    #[error("gram matrix is singular and gamma = 0: regularize or reduce features")]
    SingularGram,
    #[error(
        "reduced objective needs k <= n (got k = {k}, n = {n}); \
         use the dense objective path for wide matrices"
    )]
    WideMatrix { n: usize, k: usize },
    #[error("candidate window m = {m} cannot supply r = {r} indices with window growth off")]
    WindowTooSmall { m: usize, r: usize },
    #[error("objective became non-finite at {context}")]
    NonFiniteObjective { context: String },
    #[error("invalid configuration: {msg}")]
    Config { msg: String },
    #[error("column count {cols} does not fit the split pattern: {msg}")]
    BadSplit { cols: usize, msg: String },
    #[error(
        "solution magnitude {max_abs:.3e} exceeded 1e3 at time step {step}: \
         increase the step count (CFL violation)"
    )]
    Unstable { max_abs: f64, step: usize },
    #[error("operation unsupported for this manifold: {reason}")]
    Unsupported { reason: String },
    #[error("unknown feature-map id byte {id:#04x}")]
    BadFeatureId { id: u8 },
}

impl QmError {
    /// Failure class for exit-code mapping.
    pub fn class(&self) -> ErrorClass {
        match self {
            QmError::Io { .. }
            | QmError::BadMagic { .. }
            | QmError::Truncated { .. }
            | QmError::NonFiniteRead { .. }
            | QmError::BadFeatureId { .. } => ErrorClass::Io,
            QmError::SizeOverflow { .. }
            | QmError::DimMismatch { .. }
            | QmError::EmptyMatrix { .. }
            | QmError::IndexOutOfRange { .. }
            | QmError::AlreadySelected { .. }
            | QmError::WideMatrix { .. }
            | QmError::WindowTooSmall { .. }
            | QmError::Config { .. }
            | QmError::BadSplit { .. }
            | QmError::Unsupported { .. } => ErrorClass::Config,
            QmError::NonFinite { .. }
            | QmError::SingularGram
            | QmError::NonFiniteObjective { .. }
            | QmError::Unstable { .. } => ErrorClass::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, QmError>;
