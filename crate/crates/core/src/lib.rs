//! Spectral toolkit for the linearized 1D compressible Navier-Stokes system
//! with Maxwell's law on the periodic interval (0, 2π).
//!
//! The state is a triple (ρ, u, S) of density, velocity and stress
//! perturbations. Each Fourier mode n carries a 3×3 generator whose
//! eigenstructure drives everything else: exact modal propagation,
//! controllability Gramians, HUM control synthesis, Ingham-type frame
//! estimates and Gramian feedback stabilization.

pub mod cli;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod mp;
pub mod observability;
pub mod output;
pub mod quadrature;
pub mod spectral;
pub mod stabilize;

pub use error::{Error, Result};
pub use model::{DerivedConstants, FluidParams, PressureSpec};

/// Complex double used throughout.
pub type C64 = num_complex::Complex<f64>;
