//! Resampling-reweighting stochastic gradient descent.
//!
//! The crate is organised around the [`Objective`] trait, a weighted finite sum
//! `L(θ) = Σ w_i l_i(θ)` with per-term value and gradient oracles (uniform
//! weights `1/n` unless a loss says otherwise). On top of it:
//!
//! - [`losses`]: the concrete objectives (piecewise two-group example, Welsch
//!   regression/classification, Müller-Brown, a large Gaussian-well system,
//!   quadratic and least-squares helpers).
//! - [`samplers`]: vanilla SGD, the RR update that draws a term with probability
//!   proportional to its gradient norm and rescales it by `C/‖∇l_j‖`, group-level
//!   resampling plans, step-size schedules and trajectory execution.
//! - [`sde`]: gradient-noise covariances of both schemes, Euler–Maruyama
//!   ensembles, the piecewise equilibrium density and deviation estimates.
//! - [`analysis`]: linear stability factors, stable step-size scans, convergence
//!   bound constants and empirical rate fits.

pub mod analysis;
mod error;
pub mod losses;
pub mod objective;
pub mod rng;
pub mod samplers;
pub mod sde;

pub use error::{Error, Result};
pub use objective::{
    finite_difference_check, full_gradient, gradient_profile, term_value_and_grad, value, GradientProfile, GroupView,
    Objective, ZERO_GRADIENT_GUARD,
};
pub use samplers::{Method, StepSchedule, Trajectory};
