//! Surrogate energy functionals for density-coefficient optimization.
//!
//! A density is represented as a linear combination of atom-centered
//! Gaussian basis functions, so the optimization variable is a real
//! coefficient vector. This crate provides everything needed to train a
//! learned energy functional whose gradient-descent trajectories contract
//! toward known ground-state coefficients, and to verify the contraction
//! guarantee the training objective implies:
//!
//! * [`basis`] — Gaussian overlap matrices, Löwdin matrix roots, and the
//!   L2 density-error metric.
//! * [`synth`] — seeded synthetic molecule generator with analytically
//!   known ground states and a closed-form reference functional.
//! * [`autodiff`] — a scalar-tape differentiation engine with the
//!   second-order capability (parameter gradients of input gradients)
//!   that gradient-field losses require.
//! * [`model`] — the surrogate functional: a fixed parabola around the
//!   atomic-superposition coefficients plus a small dense network.
//! * [`losses`] — the contraction (GDI) loss and the alternative
//!   surrogate losses, both as plain functions and as tape builders.
//! * [`denopt`] — the fixed density-optimization procedure (initial
//!   estimate + plain gradient descent), with optional Löwdin-coordinate
//!   ("natrep") mode.
//! * [`trainer`] — train-time density optimization with a persistent
//!   per-molecule coefficient cache, plus the static-sampling baseline.
//! * [`diagnostics`] — contraction-factor scans, exponential-convergence
//!   verification, residual-error group reports, and 2-D energy /
//!   gradient-norm slices.

pub mod autodiff;
pub mod basis;
pub mod denopt;
pub mod diagnostics;
pub mod losses;
pub mod model;
pub mod synth;
pub mod trainer;

mod text;

pub use text::fmt_g17;

/// Coefficient vectors, gradients, and feature vectors are all plain
/// dense `f64` vectors.
pub type Vector = nalgebra::DVector<f64>;
/// Dense symmetric matrices (overlap matrices, reference Hessians).
pub type Matrix = nalgebra::DMatrix<f64>;
