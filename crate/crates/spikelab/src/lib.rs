//! Numerical laboratory for multi-spike solutions of the anisotropic
//! Neumann problem `-div(a grad u) + a u = a u^p` on a smooth planar
//! domain, in the large-exponent regime.
//!
//! The pipeline goes: domain geometry and graded triangulations, the
//! weighted Neumann operator `-Delta_a + 1`, its Green's function and
//! Robin function, the standard bubble with its radial corrections,
//! the concentration-parameter matching system, the spike ansatz, the
//! reduced energy landscape, and finally damped Newton verification of
//! the full PDE.

pub mod ansatz;
pub mod bubble;
pub mod cli;
pub mod energy;
pub mod fem;
pub mod geometry;
pub mod greens;
pub mod mu;
pub mod quad;
pub mod scalar;
pub mod vec2;
pub mod verify;

pub use scalar::Scalar;
pub use vec2::Vec2;

/// Concrete scalar used by the meshed/FEM layers.
pub type Real = f64;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("quadrature: {0}")]
    Quadrature(String),
    #[error("linear solve: {0}")]
    Solve(String),
    #[error("green's function: {0}")]
    Greens(String),
    #[error("mu system: {0}")]
    Mu(String),
    #[error("ansatz: {0}")]
    Ansatz(String),
    #[error("energy: {0}")]
    Energy(String),
    #[error("newton: {0}")]
    Newton(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
