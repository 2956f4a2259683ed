//! Linear signal-chain calibrations and measured-trace rescaling, so
//! simulated pulse shapes can be compared against digitized instrument
//! traces.

use serde::{Deserialize, Serialize};

use crate::dynamics::SampledField;
use crate::error::{Error, Result};

/// Least-squares line fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub n_points: usize,
}

/// Digitized instrument trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredTrace {
    /// Sample instants (us), strictly increasing.
    pub times: Vec<f64>,
    /// Sample values (V).
    pub voltages: Vec<f64>,
    pub channel: String,
    pub gain: f64,
}

impl MeasuredTrace {
    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.voltages.len() {
            return Err(Error::InvalidParameter(
                "trace needs equal-length, non-empty time and voltage arrays".into(),
            ));
        }
        if !self.times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "trace times must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Which tone of a sampled field a trace is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tone {
    Pump,
    Stokes,
}

/// Measured trace mapped onto the simulation grid and amplitude scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Applied amplitude factor d_sim / d_real.
    pub scale_factor: f64,
}

/// Ordinary least squares y = a x + b.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<CalibrationFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter(
            "fit needs at least two equal-length samples".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateX);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    Ok(CalibrationFit {
        slope,
        intercept,
        residual_rms: (ss / n).sqrt(),
        n_points: x.len(),
    })
}

fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= times[0] {
        return values[0];
    }
    if t >= *times.last().unwrap() {
        return *values.last().unwrap();
    }
    let mut hi = times.partition_point(|&x| x < t);
    if hi == 0 {
        hi = 1;
    }
    let lo = hi - 1;
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    values[lo] * (1.0 - w) + values[hi] * w
}

/// Shift a measured trace to start at zero, match its amplitude span to the
/// simulated tone's span, and resample it onto the simulation grid.
///
/// The scale factor is d_sim / d_real where each d is the largest absolute
/// excursion from the trace's first sample; the procedure is therefore
/// invariant under positive gain and offset of the measured trace.
pub fn rescale_trace(
    real: &MeasuredTrace,
    sim: &SampledField,
    tone: Tone,
) -> Result<RescaledTrace> {
    real.validate()?;
    sim.validate()?;
    let sim_values = match tone {
        Tone::Pump => &sim.omega_p,
        Tone::Stokes => &sim.omega_s,
    };
    let translated: Vec<f64> = real
        .voltages
        .iter()
        .map(|v| v - real.voltages[0])
        .collect();
    let d_real = translated.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if d_real == 0.0 {
        return Err(Error::FlatTrace);
    }
    let d_sim = sim_values
        .iter()
        .map(|v| (v - sim_values[0]).abs())
        .fold(0.0f64, f64::max);
    let scale_factor = d_sim / d_real;
    let scaled: Vec<f64> = translated.iter().map(|v| v * scale_factor).collect();
    let values: Vec<f64> = sim
        .times
        .iter()
        .map(|&t| interp(&real.times, &scaled, t))
        .collect();
    Ok(RescaledTrace { times: sim.times.clone(), values, scale_factor })
}

/// RMS difference of two equal-grid traces, normalized by the peak of the
/// first.
pub fn shape_discrepancy(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "traces must share a grid");
    let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(peak > 0.0, "reference trace is identically zero");
    let ms: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    ms.sqrt() / peak
}
