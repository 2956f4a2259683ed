//! Pulse parameterizations and the boundary envelope.
//!
//! Four families: Gaussian pairs, piecewise-constant amplitude tables, a
//! randomized truncated Fourier basis, and a phase-modulated cosine basis.
//! The basis families are multiplied by the reciprocal boundary envelope so
//! the fields start and end at exactly zero.

use serde::{Deserialize, Serialize};

use crate::dynamics::SampledField;

/// Default amplitude cap (rad/us).
pub const OMEGA_MAX: f64 = std::f64::consts::PI;
/// Default Gaussian amplitude: 0.9 of the cap.
pub const GAUSS_OMEGA0: f64 = 0.9 * OMEGA_MAX;
/// Boundary envelope exponent.
pub const BOUNDARY_P: u32 = 30;
/// Number of basis harmonics.
pub const N_BASIS: usize = 3;
/// Default number of field samples (1000 slices).
pub const N_SAMPLES: usize = 1001;

/// One term of the randomized Fourier basis: p-field sine/cosine weights,
/// s-field sine/cosine weights.
pub type CrabRow = [f64; 4];
/// One phase-modulated term: amplitude a, phase depth b, frequency v.
pub type PmRow = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum ShapeKind {
    /// Delayed Gaussian pair; Stokes peaks at T/2 - t_delay/2, pump at
    /// T/2 + t_delay/2.
    Gaussian { omega0: f64, sigma: f64, t_delay: f64 },
    /// Per-slice amplitudes for both tones (equal lengths).
    PiecewiseConstant { u_p: Vec<f64>, u_s: Vec<f64> },
    /// Truncated Fourier basis with frozen frequency jitter r_n in
    /// [-1/2, 1/2]: omega_n = 2 pi n (1 + r_n)/T.
    CrabBasis { coeffs: Vec<CrabRow>, freq_jitter: Vec<f64> },
    /// Cosine-of-cosine phase modulation with shared coefficients; the
    /// p-field modulates with cos(v t), the s-field with sin(v t).
    PmBasis { coeffs: Vec<PmRow> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub kind: ShapeKind,
    /// Boundary envelope exponent (even).
    pub boundary_p: u32,
    /// Amplitude cap (rad/us); samples are clipped to [-cap, cap].
    pub omega_max: f64,
}

impl PulseShape {
    pub fn new(kind: ShapeKind) -> Self {
        Self { kind, boundary_p: BOUNDARY_P, omega_max: OMEGA_MAX }
    }

    pub fn gaussian(omega0: f64, sigma: f64, t_delay: f64) -> Self {
        Self::new(ShapeKind::Gaussian { omega0, sigma, t_delay })
    }

    /// Fixed-parameter Gaussian pair: sigma = T/8, t_delay = sqrt(2) sigma.
    pub fn gaussian_fixed(t_total: f64) -> Self {
        let sigma = t_total / 8.0;
        Self::gaussian(GAUSS_OMEGA0, sigma, 2f64.sqrt() * sigma)
    }

    /// Closed-form field values at time `t` within [0, T], before clipping.
    pub fn evaluate(&self, t: f64, t_total: f64) -> (f64, f64) {
        match &self.kind {
            ShapeKind::Gaussian { omega0, sigma, t_delay } => {
                let cp = t_total / 2.0 + t_delay / 2.0;
                let cs = t_total / 2.0 - t_delay / 2.0;
                let g = |c: f64| omega0 * (-(t - c) * (t - c) / (2.0 * sigma * sigma)).exp();
                (g(cp), g(cs))
            }
            ShapeKind::PiecewiseConstant { u_p, u_s } => {
                let n = u_p.len();
                debug_assert_eq!(n, u_s.len());
                if n == 0 {
                    return (0.0, 0.0);
                }
                let k = ((t / t_total * n as f64).floor() as usize).min(n - 1);
                (u_p[k], u_s[k])
            }
            ShapeKind::CrabBasis { coeffs, freq_jitter } => {
                let env = inverse_boundary(t, t_total, self.boundary_p);
                let mut p = 0.0;
                let mut s = 0.0;
                for (n, row) in coeffs.iter().enumerate() {
                    let r = freq_jitter.get(n).copied().unwrap_or(0.0);
                    let w = std::f64::consts::TAU * (n as f64 + 1.0) * (1.0 + r) / t_total;
                    let (sin, cos) = (w * t).sin_cos();
                    p += row[0] * sin + row[1] * cos;
                    s += row[2] * sin + row[3] * cos;
                }
                (env * p, env * s)
            }
            ShapeKind::PmBasis { coeffs } => {
                let env = inverse_boundary(t, t_total, self.boundary_p);
                let mut p = 0.0;
                let mut s = 0.0;
                for &[a, b, v] in coeffs {
                    let depth = if v == 0.0 { 0.0 } else { b / v };
                    p += a * (depth * (v * t).cos()).cos();
                    s += a * (depth * (v * t).sin()).cos();
                }
                (env * p, env * s)
            }
        }
    }
}

/// Boundary function lambda(t) = h^p / (h^p - (t - h)^p) with h = T/2.
/// Diverges at t = 0 and t = T; equals 1 at t = T/2.
pub fn boundary_factor(t: f64, t_total: f64, p: u32) -> f64 {
    let h = t_total / 2.0;
    let hp = h.powi(p as i32);
    hp / (hp - (t - h).powi(p as i32))
}

/// Reciprocal envelope 1/lambda(t); exactly 0 at t = 0 and t = T.
pub fn inverse_boundary(t: f64, t_total: f64, p: u32) -> f64 {
    let h = t_total / 2.0;
    let hp = h.powi(p as i32);
    (hp - (t - h).powi(p as i32)) / hp
}

/// Evaluate a shape on the uniform instant grid t_i = i T/(n-1) and clip to
/// the shape's amplitude cap.
pub fn sample(shape: &PulseShape, t_total: f64, n_samples: usize) -> SampledField {
    assert!(n_samples >= 2, "need at least two samples");
    let mut times = Vec::with_capacity(n_samples);
    let mut omega_p = Vec::with_capacity(n_samples);
    let mut omega_s = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = i as f64 * t_total / (n_samples - 1) as f64;
        let (p, s) = shape.evaluate(t, t_total);
        times.push(t);
        omega_p.push(p.clamp(-shape.omega_max, shape.omega_max));
        omega_s.push(s.clamp(-shape.omega_max, shape.omega_max));
    }
    SampledField { t_total, times, omega_p, omega_s }
}

/// Clip every sample to [-omega_max, omega_max]; returns the clipped field
/// and the number of samples that were limited.
pub fn clip_amplitude(field: &SampledField, omega_max: f64) -> (SampledField, usize) {
    let mut out = field.clone();
    let mut clipped = 0;
    for v in out.omega_p.iter_mut().chain(out.omega_s.iter_mut()) {
        let c = v.clamp(-omega_max, omega_max);
        if c != *v {
            clipped += 1;
            *v = c;
        }
    }
    (out, clipped)
}
