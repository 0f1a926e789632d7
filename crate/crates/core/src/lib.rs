//! Simulation of a squeezed-light nonlinear magneto-optical rotation (NMOR)
//! magnetometer.
//!
//! Four-wave mixing in a vapor cell produces two-mode relative-intensity
//! squeezed light. An applied field rotates the polarization of both modes;
//! polarizing beam splitters turn the rotation into intensity modulation, and
//! the balanced difference of the two detectors carries the summed signal with
//! sub-shot-noise intensity noise. This crate models that chain end to end and
//! reads it out the way a swept spectrum analyzer would.
//!
//! - [`physics`]: constants, Larmor and Rabi frequencies, Rb vapor density
//! - [`squeezing`]: Gaussian-state source model and noise ratios
//! - [`signal`]: rotation/analyzer signal model and trace synthesis
//! - [`spectral`]: PSD estimation, tone SNR, linewidth, sensitivity
//! - [`config`] and [`harness`]: experiment files, presets, sweeps

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod harness;
pub mod physics;
pub mod rng;
pub mod signal;
pub mod spectral;
pub mod squeezing;
pub mod traces;

pub use error::{Error, Result};
