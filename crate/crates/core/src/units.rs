//! Unit conventions.
//!
//! Internally every frequency-like quantity is an angular frequency in
//! rad/us, every time is in us and every magnetic field in gauss. With the
//! register's couplings this keeps matrix entries within a few orders of
//! magnitude of unity.

use std::f64::consts::TAU;

/// Angular rad/us per (plain) MHz.
pub const MHZ: f64 = TAU;
/// Angular rad/us per (plain) kHz.
pub const KHZ: f64 = TAU * 1e-3;
/// Angular rad/us per (plain) GHz.
pub const GHZ: f64 = TAU * 1e3;

/// Convert a plain-cycle frequency in MHz to rad/us.
pub fn mhz(f: f64) -> f64 {
    f * MHZ
}

/// Convert a plain-cycle frequency in kHz to rad/us.
pub fn khz(f: f64) -> f64 {
    f * KHZ
}

/// Convert rad/us back to a plain-cycle frequency in MHz.
pub fn to_mhz(w: f64) -> f64 {
    w / MHZ
}
