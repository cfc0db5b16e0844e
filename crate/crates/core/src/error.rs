//! Error type shared by the numerical modules.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("hbar = {hbar} is below the grid-resolvable minimum {min_hbar}")]
    Resolution { hbar: f64, min_hbar: f64 },

    #[error("shift is not on the lattice: {0}")]
    OffLattice(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("power iteration did not converge after {iterations} steps (last = {last}, error bound = {bound})")]
    NotConverged { iterations: usize, last: f64, bound: f64 },

    #[error("order fit needs at least 3 usable rows, got {0}")]
    TooFewRows(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
