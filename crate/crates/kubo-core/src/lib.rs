//! Local and configuration-averaged Kubo conductivity of incommensurate
//! twisted bilayers.
//!
//! The fast path expands the conductivity function in a truncated bivariate
//! Chebyshev series and evaluates it through sparse three-term recurrences.
//! A pole expansion handles low temperatures, a periodic trapezoidal rule
//! integrates over layer shifts, and a dense eigensolver serves as the
//! reference for everything else.

pub mod cheb2d;
pub mod confunc;
pub mod geometry;
pub mod hamiltonian;
pub mod kpm;
pub mod oracle;
pub mod poles;
pub mod quadrature;

pub use num_complex::Complex64 as C64;

/// Errors raised by the numerical kernels.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
