//! Gaussian-process regression on the (detuning, bias) plane.
//!
//! Squared-exponential kernel on box-normalized inputs, constant mean,
//! per-axis length scales, and hyperparameters chosen by maximizing the log
//! marginal likelihood with a few deterministic simplex starts. The noise
//! floor is fixed at 1e-6 so the model interpolates its samples.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve};
use crate::optim::{nelder_mead, NmConfig};

/// Observation noise variance.
const NOISE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Surrogate {
    /// Normalized sample locations.
    x: Vec<[f64; 2]>,
    /// Box used for normalization: (lo, hi) per axis.
    bounds: [(f64, f64); 2],
    mean: f64,
    /// Kernel weights (K + noise)^-1 (y - mean).
    alpha: Array1<f64>,
    /// Per-axis length scales (normalized coordinates).
    length_scales: [f64; 2],
    signal_var: f64,
    pub log_marginal_likelihood: f64,
}

fn kernel(a: &[f64; 2], b: &[f64; 2], ls: &[f64; 2], sf2: f64) -> f64 {
    let d0 = (a[0] - b[0]) / ls[0];
    let d1 = (a[1] - b[1]) / ls[1];
    sf2 * (-0.5 * (d0 * d0 + d1 * d1)).exp()
}

struct FitData {
    x: Vec<[f64; 2]>,
    y_centered: Array1<f64>,
}

/// log p(y | X, theta); returns None when the kernel matrix fails to factor.
fn log_marginal(data: &FitData, ls: &[f64; 2], sf2: f64) -> Option<(f64, Array1<f64>)> {
    let n = data.x.len();
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = kernel(&data.x[i], &data.x[j], ls, sf2);
        }
        k[(i, i)] += NOISE_FLOOR;
    }
    let l = cholesky(&k)?;
    let alpha = cholesky_solve(&l, &data.y_centered);
    let fit: f64 = data
        .y_centered
        .iter()
        .zip(alpha.iter())
        .map(|(y, a)| y * a)
        .sum();
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let lml = -0.5 * fit - log_det - n as f64 / 2.0 * (std::f64::consts::TAU / 2.0).ln();
    Some((lml, alpha))
}

/// Fit the surrogate to ((delta, kappa), fidelity) samples.
pub fn surrogate_fit(samples: &[((f64, f64), f64)]) -> Result<Surrogate> {
    if samples.len() < 4 {
        return Err(Error::IllConditioned(format!(
            "need at least 4 samples, got {}",
            samples.len()
        )));
    }
    let lo_hi = |get: fn(&((f64, f64), f64)) -> f64| -> (f64, f64) {
        samples.iter().map(get).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), v| (lo.min(v), hi.max(v)),
        )
    };
    let bd = lo_hi(|s| s.0 .0);
    let bk = lo_hi(|s| s.0 .1);
    if bd.1 - bd.0 <= 0.0 || bk.1 - bk.0 <= 0.0 {
        return Err(Error::IllConditioned(
            "sample locations are collinear along an axis".into(),
        ));
    }
    let bounds = [bd, bk];
    let norm = |d: f64, k: f64| -> [f64; 2] {
        [
            (d - bounds[0].0) / (bounds[0].1 - bounds[0].0),
            (k - bounds[1].0) / (bounds[1].1 - bounds[1].0),
        ]
    };
    let x: Vec<[f64; 2]> = samples.iter().map(|&((d, k), _)| norm(d, k)).collect();
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            let dist = (x[i][0] - x[j][0]).hypot(x[i][1] - x[j][1]);
            if dist < 1e-10 {
                return Err(Error::IllConditioned(format!(
                    "duplicate sample locations at index {i} and {j}"
                )));
            }
        }
    }

    let mean = samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64;
    let y_centered =
        Array1::from_iter(samples.iter().map(|s| s.1 - mean));
    let var = y_centered.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64;
    let data = FitData { x: x.clone(), y_centered };

    // hyperparameters: theta = (ln l_delta, ln l_kappa, ln sf2)
    let clamp_theta = |t: &[f64]| -> ([f64; 2], f64) {
        let ls = [
            t[0].clamp((0.02f64).ln(), (5.0f64).ln()).exp(),
            t[1].clamp((0.02f64).ln(), (5.0f64).ln()).exp(),
        ];
        let sf2 = t[2].clamp((1e-6f64).ln(), (1e2f64).ln()).exp();
        (ls, sf2)
    };
    let objective = |t: &[f64]| -> f64 {
        let (ls, sf2) = clamp_theta(t);
        match log_marginal(&data, &ls, sf2) {
            Some((lml, _)) => -lml,
            None => f64::INFINITY,
        }
    };

    let sf0 = var.max(1e-4).ln();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for l0 in [0.15f64, 0.4, 1.0] {
        let t0 = vec![l0.ln(), l0.ln(), sf0];
        let simplex = vec![
            t0.clone(),
            vec![t0[0] + 0.7, t0[1], t0[2]],
            vec![t0[0], t0[1] + 0.7, t0[2]],
            vec![t0[0], t0[1], t0[2] + 0.7],
        ];
        let out = nelder_mead(objective, simplex, &NmConfig { f_tol: 1e-6, max_evals: 300 });
        if best.as_ref().map_or(true, |(v, _)| out.value < *v) {
            best = Some((out.value, out.x));
        }
    }
    let (_, theta) = best.expect("at least one hyperparameter start");
    let (length_scales, signal_var) = clamp_theta(&theta);
    let (lml, alpha) = log_marginal(&data, &length_scales, signal_var).ok_or_else(|| {
        Error::IllConditioned("kernel matrix is not positive definite".into())
    })?;

    Ok(Surrogate {
        x,
        bounds,
        mean,
        alpha,
        length_scales,
        signal_var,
        log_marginal_likelihood: lml,
    })
}

impl Surrogate {
    /// Posterior mean at (delta, kappa).
    pub fn predict(&self, delta: f64, kappa: f64) -> f64 {
        let q = [
            (delta - self.bounds[0].0) / (self.bounds[0].1 - self.bounds[0].0),
            (kappa - self.bounds[1].0) / (self.bounds[1].1 - self.bounds[1].0),
        ];
        let mut acc = self.mean;
        for (xi, ai) in self.x.iter().zip(self.alpha.iter()) {
            acc += ai * kernel(&q, xi, &self.length_scales, self.signal_var);
        }
        acc
    }
}
