//! Fidelity landscapes over control-field detuning and amplitude bias:
//! brute-force maps, few-sample surrogate estimates, Gaussian-weighted
//! average fidelity, and the robust phase-modulated optimization that
//! maximizes it.

pub mod gp;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_with_eigensystem, DensityMatrix, Integrator, PropagateOptions};
use crate::error::{Error, Result};
use crate::hamiltonian::{diagonalize, Disturbance, DriveSpec, SystemParams};
use crate::optim::{
    nelder_mead, pm_random_point, pm_shape, reference_fidelity, NmConfig, OptimizationResult,
    SearchConfig,
};
use crate::pulses::{sample, PulseShape, ShapeKind, N_SAMPLES};
use crate::units;

pub use gp::{surrogate_fit, Surrogate};

/// Rectangular evaluation grid; both axes strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Detuning values (rad/us).
    pub delta: Vec<f64>,
    /// Amplitude-bias values (dimensionless).
    pub kappa: Vec<f64>,
}

impl GridSpec {
    pub fn uniform(
        delta_range: (f64, f64),
        kappa_range: (f64, f64),
        n_delta: usize,
        n_kappa: usize,
    ) -> Self {
        let lin = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Self {
            delta: lin(delta_range.0, delta_range.1, n_delta),
            kappa: lin(kappa_range.0, kappa_range.1, n_kappa),
        }
    }

    /// 50x50 grid over detuning/2pi in [-200, 200] kHz and bias in
    /// [-0.5, 0.5]. The detuning span covers the full fidelity contrast of
    /// the register's optimized fields (about 0.9 at the center down to
    /// below 0.1 at the detuning edge).
    pub fn default_map() -> Self {
        let half = units::khz(200.0);
        Self::uniform((-half, half), (-0.5, 0.5), 50, 50)
    }

    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if self.delta.is_empty() || self.kappa.is_empty() {
            return Err(Error::InvalidParameter("empty landscape grid".into()));
        }
        if !increasing(&self.delta) || !increasing(&self.kappa) {
            return Err(Error::InvalidParameter(
                "landscape axes must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    fn bounding_box(&self) -> ((f64, f64), (f64, f64)) {
        (
            (self.delta[0], *self.delta.last().unwrap()),
            (self.kappa[0], *self.kappa.last().unwrap()),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Brute,
    Estimated,
}

/// Fidelity values on a (delta, kappa) grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessMap {
    pub delta_axis: Vec<f64>,
    pub kappa_axis: Vec<f64>,
    /// values[[i, j]] = f(delta_axis[i], kappa_axis[j]).
    pub values: Array2<f64>,
    pub provenance: Provenance,
    /// Sample set behind an estimated map; empty for brute maps.
    pub samples: Vec<((f64, f64), f64)>,
}

impl RobustnessMap {
    /// Value at the grid point closest to (0, 0).
    pub fn value_nearest_origin(&self) -> f64 {
        let nearest = |axis: &[f64]| {
            axis.iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap()
                .0
        };
        self.values[(nearest(&self.delta_axis), nearest(&self.kappa_axis))]
    }

    /// Fraction of grid points with fidelity at or above the threshold.
    pub fn area_at_least(&self, threshold: f64) -> f64 {
        let hits = self.values.iter().filter(|&&v| v >= threshold).count();
        hits as f64 / self.values.len() as f64
    }

    /// Root-mean-square difference of the value grids.
    pub fn rmse(&self, other: &RobustnessMap) -> f64 {
        assert_eq!(self.values.dim(), other.values.dim());
        let n = self.values.len() as f64;
        let se: f64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (se / n).sqrt()
    }
}

/// Gaussian weights for the average-fidelity objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightModel {
    pub sigma_delta: f64,
    pub sigma_kappa: f64,
}

impl WeightModel {
    pub fn new(sigma_delta: f64, sigma_kappa: f64) -> Result<Self> {
        if sigma_delta <= 0.0 || sigma_kappa <= 0.0 {
            return Err(Error::InvalidParameter(
                "weight widths must be strictly positive".into(),
            ));
        }
        Ok(Self { sigma_delta, sigma_kappa })
    }

    /// Quarter of the grid's detuning half-range, bias width 0.15.
    pub fn for_grid(grid: &GridSpec) -> Self {
        let (dr, _) = grid.bounding_box();
        let half = 0.5 * (dr.1 - dr.0);
        Self { sigma_delta: 0.25 * half, sigma_kappa: 0.15 }
    }
}

impl Default for WeightModel {
    fn default() -> Self {
        Self::for_grid(&GridSpec::default_map())
    }
}

/// Evaluation settings for landscape pixels.
#[derive(Debug, Clone)]
pub struct LandscapeConfig {
    pub integrator: Integrator,
    pub n_samples: usize,
    pub drive: DriveSpec,
    pub initial_state: usize,
    pub target: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            integrator: Integrator::fast(),
            n_samples: N_SAMPLES,
            drive: DriveSpec::default(),
            initial_state: 0,
            target: 1,
        }
    }
}

/// f(delta, kappa) for one disturbance by full propagation of the field.
fn pixel_fidelity(
    field: &crate::dynamics::SampledField,
    dist: Disturbance,
    params: &SystemParams,
    eig: &crate::hamiltonian::EigenSystem,
    cfg: &LandscapeConfig,
) -> f64 {
    let opts = PropagateOptions {
        integrator: cfg.integrator,
        drive: cfg.drive,
        checkpoint_stride: usize::MAX,
    };
    match propagate_with_eigensystem(
        field,
        dist,
        params,
        eig,
        &DensityMatrix::pure_state(cfg.initial_state),
        &opts,
    ) {
        Ok(t) => t.final_fidelity(cfg.target),
        Err(_) => 0.0,
    }
}

/// Full propagation on every grid pixel.
pub fn landscape_brute(
    shape: &PulseShape,
    t_total: f64,
    params: &SystemParams,
    grid: &GridSpec,
    cfg: &LandscapeConfig,
) -> Result<RobustnessMap> {
    grid.validate()?;
    let eig = diagonalize(params)?;
    let field = sample(shape, t_total, crate::optim::natural_samples(shape, cfg.n_samples));
    let m = grid.delta.len();
    let n = grid.kappa.len();
    let flat: Vec<f64> = (0..m * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let dist = Disturbance { delta: grid.delta[i], kappa: grid.kappa[j] };
            pixel_fidelity(&field, dist, params, &eig, cfg)
        })
        .collect();
    Ok(RobustnessMap {
        delta_axis: grid.delta.clone(),
        kappa_axis: grid.kappa.clone(),
        values: Array2::from_shape_vec((m, n), flat).expect("shape matches"),
        provenance: Provenance::Brute,
        samples: Vec::new(),
    })
}

/// Sample locations drawn uniformly over the grid's bounding box.
fn draw_samples(grid: &GridSpec, n_samples: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let ((dlo, dhi), (klo, khi)) = grid.bounding_box();
    (0..n_samples)
        .map(|_| (rng.gen_range(dlo..dhi), rng.gen_range(klo..khi)))
        .collect()
}

/// Random locations stratified on a k x k jittered grid when the count is a
/// perfect square (one draw per cell); plain uniform otherwise. Stratifying
/// suppresses the sample-to-sample variance of the surrogate average, which
/// the robust search minimizes over.
fn draw_samples_stratified(
    grid: &GridSpec,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    let k = (n_samples as f64).sqrt().round() as usize;
    if k * k != n_samples {
        return draw_samples(grid, n_samples, rng);
    }
    let ((dlo, dhi), (klo, khi)) = grid.bounding_box();
    let (dw, kw) = ((dhi - dlo) / k as f64, (khi - klo) / k as f64);
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..k {
        for j in 0..k {
            let d = dlo + (i as f64 + rng.gen_range(0.0..1.0)) * dw;
            let ka = klo + (j as f64 + rng.gen_range(0.0..1.0)) * kw;
            out.push((d, ka));
        }
    }
    out
}

/// Estimate the landscape from a few propagated samples and a surrogate fit;
/// predictions are clamped to [0, 1].
pub fn landscape_estimate(
    shape: &PulseShape,
    t_total: f64,
    params: &SystemParams,
    grid: &GridSpec,
    n_samples: usize,
    seed: u64,
    cfg: &LandscapeConfig,
) -> Result<RobustnessMap> {
    grid.validate()?;
    if n_samples < 4 {
        return Err(Error::IllConditioned(format!(
            "need at least 4 surrogate samples, got {n_samples}"
        )));
    }
    let eig = diagonalize(params)?;
    let field = sample(shape, t_total, crate::optim::natural_samples(shape, cfg.n_samples));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locations = draw_samples(grid, n_samples, &mut rng);
    let samples: Vec<((f64, f64), f64)> = locations
        .into_par_iter()
        .map(|(d, k)| {
            let f = pixel_fidelity(
                &field,
                Disturbance { delta: d, kappa: k },
                params,
                &eig,
                cfg,
            );
            ((d, k), f)
        })
        .collect();
    let model = surrogate_fit(&samples)?;
    let m = grid.delta.len();
    let n = grid.kappa.len();
    let values = Array2::from_shape_fn((m, n), |(i, j)| {
        model.predict(grid.delta[i], grid.kappa[j]).clamp(0.0, 1.0)
    });
    Ok(RobustnessMap {
        delta_axis: grid.delta.clone(),
        kappa_axis: grid.kappa.clone(),
        values,
        provenance: Provenance::Estimated,
        samples,
    })
}

/// Normalized Gaussian-weighted average of a map's values.
pub fn average_fidelity_map(map: &RobustnessMap, weights: &WeightModel) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &d) in map.delta_axis.iter().enumerate() {
        let pd = (-0.5 * (d / weights.sigma_delta).powi(2)).exp();
        for (j, &k) in map.kappa_axis.iter().enumerate() {
            let pk = (-0.5 * (k / weights.sigma_kappa).powi(2)).exp();
            num += pd * pk * map.values[(i, j)];
            den += pd * pk;
        }
    }
    num / den
}

/// Same weighted average evaluated directly from a fidelity function.
pub fn average_fidelity_fn(
    f: impl Fn(f64, f64) -> f64,
    grid: &GridSpec,
    weights: &WeightModel,
) -> f64 {
    let gauss = |x: f64, s: f64| (-0.5 * (x / s).powi(2)).exp();
    let mut num = 0.0;
    let mut den = 0.0;
    for &d in &grid.delta {
        for &k in &grid.kappa {
            let w = gauss(d, weights.sigma_delta) * gauss(k, weights.sigma_kappa);
            num += w * f(d, k);
            den += w;
        }
    }
    num / den
}

/// Robust phase-modulated optimization settings.
#[derive(Debug, Clone)]
pub struct BpmConfig {
    pub grid: GridSpec,
    /// Surrogate samples per candidate.
    pub n_surrogate_samples: usize,
    pub trials: usize,
    pub nm: NmConfig,
    pub seed: u64,
    pub landscape: LandscapeConfig,
    pub search: SearchConfig,
    /// Optional starting shape (typically the nominal phase-modulated
    /// optimum); its coefficients seed one vertex of every trial simplex.
    pub warm_start: Option<PulseShape>,
}

impl Default for BpmConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default_map(),
            n_surrogate_samples: 16,
            trials: 10,
            nm: NmConfig { f_tol: 1e-4, max_evals: 300 },
            seed: 0,
            landscape: LandscapeConfig::default(),
            search: SearchConfig::default(),
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BpmOutcome {
    /// Best shape with its honest brute-map average fidelity.
    pub result: OptimizationResult,
    /// Brute-force landscape of the optimized field.
    pub map: RobustnessMap,
}

fn pm_coefficients(shape: &PulseShape) -> Option<Vec<f64>> {
    match &shape.kind {
        ShapeKind::PmBasis { coeffs } => {
            Some(coeffs.iter().flat_map(|r| r.iter().copied()).collect())
        }
        _ => None,
    }
}

/// Maximize the Gaussian-weighted average fidelity over phase-modulated
/// coefficients, estimating the average per candidate from a fresh
/// few-sample surrogate. The reported map is recomputed by brute force.
pub fn bpm_optimize(
    t_total: f64,
    params: &SystemParams,
    weights: &WeightModel,
    cfg: &BpmConfig,
) -> Result<BpmOutcome> {
    cfg.grid.validate()?;
    let eig = diagonalize(params)?;
    let warm = cfg.warm_start.as_ref().and_then(pm_coefficients);
    let dim = 3 * cfg.search.n_basis;

    struct Trial {
        x: Vec<f64>,
        trace: Vec<f64>,
        budget_exhausted: bool,
    }

    let trials: Vec<Trial> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(0x42 + trial);
            let mut search_cfg = cfg.search.clone();
            search_cfg.seed = cfg.seed;
            let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
            if let Some(w) = &warm {
                // explore around the nominal optimum, more broadly with
                // every trial
                let scale = 0.15 + 0.1 * trial as f64;
                simplex.push(w.clone());
                while simplex.len() < dim + 1 {
                    simplex.push(
                        w.iter()
                            .map(|v| v + scale * rng.gen_range(-1.0..1.0) * (1.0 + v.abs()))
                            .collect(),
                    );
                }
            }
            while simplex.len() < dim + 1 {
                simplex.push(pm_random_point(&mut rng, t_total, &search_cfg));
            }

            // fresh, seeded sample locations per candidate
            let mut candidate = 0u64;
            let mut objective = |x: &[f64]| -> f64 {
                let loc_seed = cfg
                    .seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(trial << 32)
                    .wrapping_add(candidate);
                candidate += 1;
                let mut loc_rng = ChaCha8Rng::seed_from_u64(loc_seed);
                let shape = pm_shape(x, cfg.search.omega_max);
                let field = sample(&shape, t_total, cfg.landscape.n_samples);
                let locations =
                    draw_samples_stratified(&cfg.grid, cfg.n_surrogate_samples, &mut loc_rng);
                let samples: Vec<((f64, f64), f64)> = locations
                    .into_iter()
                    .map(|(d, k)| {
                        let f = pixel_fidelity(
                            &field,
                            Disturbance { delta: d, kappa: k },
                            params,
                            &eig,
                            &cfg.landscape,
                        );
                        ((d, k), f)
                    })
                    .collect();
                match surrogate_fit(&samples) {
                    Ok(model) => {
                        let avg = average_fidelity_fn(
                            |d, k| model.predict(d, k).clamp(0.0, 1.0),
                            &cfg.grid,
                            weights,
                        );
                        -avg
                    }
                    Err(_) => 0.0,
                }
            };
            let out = nelder_mead(&mut objective, simplex, &cfg.nm);
            Trial {
                x: out.x,
                trace: out.trace.iter().map(|&(_, v)| -v).collect(),
                budget_exhausted: out.budget_exhausted,
            }
        })
        .collect();

    // The surrogate objective carries sampling noise, so the trial winners
    // are re-scored honestly: a brute map per candidate, best weighted
    // average wins (lowest trial index on ties).
    let mut best: Option<(f64, PulseShape, RobustnessMap)> = None;
    for t in &trials {
        let shape = pm_shape(&t.x, cfg.search.omega_max);
        let map = landscape_brute(&shape, t_total, params, &cfg.grid, &cfg.landscape)?;
        let avg = average_fidelity_map(&map, weights);
        if best.as_ref().map_or(true, |(v, _, _)| avg > *v) {
            best = Some((avg, shape, map));
        }
    }
    let (brute_average, best_shape, map) = best.expect("at least one trial");

    let mut trace = Vec::new();
    let mut idx = 0usize;
    for t in &trials {
        for &v in &t.trace {
            trace.push((idx, v));
            idx += 1;
        }
    }
    Ok(BpmOutcome {
        result: OptimizationResult {
            method: "bpm".into(),
            t_total,
            best_shape,
            best_fidelity: brute_average,
            n_evaluations: idx,
            trace,
            seed: cfg.seed,
            budget_exhausted: trials.iter().any(|t| t.budget_exhausted),
        },
        map,
    })
}

/// Convenience wrapper: nominal transfer fidelity of a shape (the
/// zero-disturbance point of the landscape).
pub fn nominal_fidelity(
    shape: &PulseShape,
    t_total: f64,
    params: &SystemParams,
    cfg: &LandscapeConfig,
) -> Result<f64> {
    let search = SearchConfig {
        drive: cfg.drive,
        initial_state: cfg.initial_state,
        target: cfg.target,
        n_samples: cfg.n_samples,
        ..Default::default()
    };
    reference_fidelity(shape, t_total, params, &search)
}
