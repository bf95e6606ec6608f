//! Kinetic plasma transport on Cartesian meshes with embedded boundaries.
//!
//! This crate solves two reduced plasma models:
//!
//! - the 2D guiding-center model, where a density is advected by the
//!   divergence-free E×B velocity `U = (-∂φ/∂y, ∂φ/∂x)` and the potential
//!   comes from a variable-coefficient Poisson equation, and
//! - the 4D drift-kinetic model `(x, y, z, v∥)` with E×B advection in the
//!   plane, free streaming along z and parallel acceleration in v∥, closed
//!   by a quasi-neutrality equation.
//!
//! Advection is discretized by two interchangeable schemes built on the same
//! Hermite-WENO reconstruction: a backward semi-Lagrangian update (no CFL
//! restriction, not conservative) and a conservative finite-difference flux
//! scheme with RK4 (CFL-restricted, exactly mass conserving on periodic
//! grids). A mixed driver runs semi-Lagrangian steps while the solution is
//! smooth and latches over to the conservative scheme once a per-step mass
//! imbalance criterion trips.
//!
//! Non-rectangular domains (disks, a tokamak-like D-shape) are embedded in
//! a Cartesian bounding grid; elliptic solves close their stencils with
//! quadratic extrapolation along inward boundary normals, and transport
//! sweeps read equilibrium values from a filled exterior band.

pub mod diagnostics;
pub mod elliptic;
pub mod geometry;
pub mod grid;
pub mod hweno;
pub mod models;
pub mod transport;

pub mod app;

use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid run configuration or parameters.
    #[error("configuration error: {0}")]
    Config(String),
    /// Embedded-domain construction failure (shape vs. grid mismatch,
    /// stencil starvation, projection non-convergence).
    #[error("geometry error: {0}")]
    Geometry(String),
    /// Linear or nonlinear solver failure.
    #[error("solver error: {0}")]
    Solver(String),
    /// Out-of-range index or incompatible field/grid pairing; a caller bug.
    #[error("index error: {0}")]
    Index(String),
    /// Snapshot encoding/decoding failure.
    #[error("snapshot error: {0}")]
    Snapshot(String),
    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
