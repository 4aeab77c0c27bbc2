//! Layered atmospheric tomography.
//!
//! The crate models a telescope aperture looking through a stack of thin
//! turbulent layers along a handful of guide-star directions. It provides
//!
//! - [`geometry`]: directions, shifted apertures, overlap maps and the
//!   single-overlap balls on which reconstructions lose information,
//! - [`field`]: discretized layer stacks and pupil data with their weighted
//!   inner products and the bilinear stencil shared by forward and adjoint,
//! - [`operator`]: the tomography operator, its exact discrete adjoint and a
//!   photon-noise model,
//! - [`turbulence`]: von Kármán phase screens for test atmospheres,
//! - [`reconstruct`]: Landweber, Landweber-Kaczmarz and Tikhonov-CG solvers,
//! - [`analysis`]: null-space witnesses, range-of-adjoint checks,
//!   overlap-stratified errors and Strehl evaluation,
//! - [`io`]: binary field files, CSV and PGM output.
//!
//! Layer and direction indices are zero-based throughout the library.

pub mod analysis;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod operator;
pub mod reconstruct;
pub mod turbulence;

pub use error::{Error, Result};

/// A point or offset in the plane, `[x, y]`.
pub type Vec2 = [f64; 2];
