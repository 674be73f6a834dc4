//! Simulation and pulse-sequence optimization for two-qubit quantum
//! information processing on a spin-3/2 nucleus under Zeeman-perturbed
//! nuclear quadrupole resonance.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: small dense complex operators, spin matrices, exponentials.
//! * [`spin`]: Hamiltonians, frame changes, energy levels and line positions.
//! * [`dynamics`]: pulse propagation and FID synthesis.
//! * [`spectrum`]: Fourier transform, peak picking, normalized amplitudes.
//! * [`gates`] and [`optimize`]: target gates, fidelities, pulse optimization.
//! * [`pps`]: pseudo-pure states by temporal averaging and their readouts.
//! * [`orientation`]: goniometer geometry, θ scans and orientation fits.

pub mod bfgs;
pub mod dynamics;
pub mod error;
pub mod gates;
pub mod linalg;
pub mod optimize;
pub mod orientation;
pub mod pps;
pub mod simplex;
pub mod spectrum;
pub mod spin;

pub use error::{Error, Result};
