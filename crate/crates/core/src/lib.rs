//! Cubic NLS wave packets with a localized nonlinear coefficient: spectral
//! evolution, the geometric-optics approximation, extraction of line
//! integrals from the nonlinear phase and filtered backprojection.

pub mod config;
pub mod error;
mod fft;
pub mod grid;
pub mod io;
pub mod models;
pub mod quad;
pub mod recover;
pub mod solver;
pub mod sweep;
pub mod wavepacket;

pub use error::{Error, Result};
pub use grid::{Field, GridSpec, Point, SpectralField};
pub use models::{BumpSpec, EnvelopeSpec, Phantom};
pub use num_complex::Complex64;
