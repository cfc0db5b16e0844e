//! Gauge-covariant magnetic Weyl calculus on grids.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: magnetic fields, vector potentials, gauges, fluxes and the 2-cocycle;
//! * [`symbols`]: grids, kernel and phase-space symbols, the partial Fourier transform, norms;
//! * [`algebra`]: twisted convolution, the magnetic Moyal product, involution and brackets;
//! * [`quantization`]: Schrödinger-representation operators on a wavefunction grid;
//! * [`semiclassics`]: residual curves as the Planck parameter goes to zero, order fits;
//! * [`cli`]: configuration parsing, subcommand dispatch and CSV/SVG output.

pub mod algebra;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod quantization;
pub mod semiclassics;
pub mod symbols;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Largest configuration-space dimension supported by the fixed-size scratch buffers.
pub const MAX_DIM: usize = 6;
