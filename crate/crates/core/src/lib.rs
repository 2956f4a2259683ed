//! Simulation and pulse-optimization toolkit for a decoherence-protected
//! two-nuclear-spin register controlled through an NV electron spin.
//!
//! The crate models the register's static Hamiltonian and its protected
//! eigenstate pair, propagates the driven open-system dynamics under shaped
//! microwave fields, optimizes those fields (Gaussian passage, gradient
//! ascent, randomized-basis and phase-modulated direct search), maps
//! transfer fidelity over control imperfections, estimates such maps from a
//! handful of samples with a Gaussian-process surrogate, and fits the linear
//! calibrations needed to compare simulated pulses with digitized hardware
//! traces.

pub mod calibration;
pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod pulses;
pub mod robustness;
pub mod units;

pub use error::{Error, Result};

/// Toolkit version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
