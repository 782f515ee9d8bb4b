//! Spectral diffusion of optically coherent solid-state emitters.
//!
//! The crate covers the full analysis chain for photoluminescence-excitation
//! (PLE) line scans of a single emitter, plus the simulations used to
//! interpret them:
//!
//! - [`specfun`]: Faddeeva function and Voigt line shapes
//! - [`ple`]: scan ingestion, filtering, single-scan fits, diffusion rates
//! - [`linewidth_mc`]: Monte Carlo estimator for low-count homogeneous linewidths
//! - [`diffusion`]: Wiener / Ornstein–Uhlenbeck frequency trajectories
//! - [`cylfield`]: point-charge fields in a dielectric cylinder and Stark shifts
//! - [`charge_mc`]: Monte Carlo over fluctuating charge configurations
//! - [`protocol`]: entanglement-attempt budget for a pulsed protocol
//!
//! Frequencies are in Hz, times in s, powers in W and lengths in m.

pub mod bessel;
pub mod charge_mc;
pub mod cylfield;
pub mod diffusion;
pub mod error;
pub mod fitkit;
pub mod linewidth_mc;
pub mod par;
pub mod ple;
pub mod protocol;
pub mod quad;
pub mod rng;
pub mod specfun;
pub mod spectrum;
pub mod stats;
pub mod units;

pub use error::{Error, Result};
