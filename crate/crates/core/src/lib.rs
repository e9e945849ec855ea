//! Numerical toolkit for bubble solutions of critical Hartree-type
//! Hamiltonian elliptic systems: exact solution profiles and their Riesz
//! convolutions, the Funk-Hecke spectral nondegeneracy analysis, polygonal
//! multi-bubble ansatz diagnostics, local Pohozaev residuals, and the
//! reduced finite-dimensional energy balance.

pub mod bubble;
pub mod multibubble;
pub mod nondegeneracy;
pub mod params;
pub mod pohozaev;
pub mod quadrature;
pub mod reduced;
pub mod stereo;

use thiserror::Error as ThisError;

/// Errors shared across the toolkit.
#[derive(Debug, Clone, ThisError)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A quadrature or fit failed to reach the requested accuracy; carries
    /// the partial estimate.
    #[error("accuracy error: {message} (partial estimate {partial:e})")]
    Accuracy { message: String, partial: f64 },
    /// Evaluation at a singular point of a map.
    #[error("singular point: {0}")]
    Singular(String),
    /// A solver found no admissible configuration.
    #[error("no admissible configuration: {0}")]
    NoRoot(String),
}

pub type Result<T> = std::result::Result<T, Error>;
