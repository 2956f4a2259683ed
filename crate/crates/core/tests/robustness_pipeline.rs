//! Landscape pipeline on the real register: disturbance continuity,
//! estimate-vs-brute quality on a small grid, and weighted-average limits.

use nvreg::dynamics::{propagate, DensityMatrix, Integrator, PropagateOptions};
use nvreg::hamiltonian::{Disturbance, SystemParams};
use nvreg::pulses::{sample, PulseShape, ShapeKind};
use nvreg::robustness::{
    average_fidelity_fn, average_fidelity_map, landscape_brute, landscape_estimate, GridSpec,
    LandscapeConfig, WeightModel,
};

fn pm_shape() -> PulseShape {
    PulseShape::new(ShapeKind::PmBasis {
        coeffs: vec![[2.4, 1.2, 2.0], [0.8, 2.5, 3.6], [-0.5, 0.4, 5.5]],
    })
}

fn fidelity_at(dist: Disturbance, n_samples: usize) -> f64 {
    let field = sample(&pm_shape(), 3.0, n_samples);
    propagate(
        &field,
        dist,
        &SystemParams::default(),
        &DensityMatrix::pure_state(0),
        &PropagateOptions {
            integrator: Integrator::fast(),
            checkpoint_stride: usize::MAX,
            ..Default::default()
        },
    )
    .unwrap()
    .final_fidelity(1)
}

#[test]
fn fidelity_is_continuous_in_the_disturbance() {
    let f0 = fidelity_at(Disturbance::NONE, 301);
    for h in [1e-3, 1e-2] {
        let fd = fidelity_at(Disturbance { delta: h, kappa: 0.0 }, 301);
        let fk = fidelity_at(Disturbance { delta: 0.0, kappa: h }, 301);
        assert!((fd - f0).abs() < 10.0 * h, "delta step {h}: jump {}", (fd - f0).abs());
        assert!((fk - f0).abs() < 10.0 * h, "kappa step {h}: jump {}", (fk - f0).abs());
    }
}

#[test]
fn estimate_tracks_brute_on_a_small_grid() {
    let params = SystemParams::default();
    let shape = pm_shape();
    let grid = GridSpec::uniform(
        (-nvreg::units::khz(100.0), nvreg::units::khz(100.0)),
        (-0.5, 0.5),
        12,
        12,
    );
    let cfg = LandscapeConfig { n_samples: 301, ..Default::default() };
    let brute = landscape_brute(&shape, 3.0, &params, &grid, &cfg).unwrap();
    let mut rmses: Vec<f64> = (0..3)
        .map(|seed| {
            landscape_estimate(&shape, 3.0, &params, &grid, 16, seed, &cfg)
                .unwrap()
                .rmse(&brute)
        })
        .collect();
    rmses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(
        rmses[1] <= 0.08,
        "median small-grid rmse {rmses:?} should be well below the map's dynamic range"
    );
}

#[test]
fn weighted_average_interpolates_between_origin_and_uniform() {
    let params = SystemParams::default();
    let shape = pm_shape();
    let grid = GridSpec::uniform(
        (-nvreg::units::khz(100.0), nvreg::units::khz(100.0)),
        (-0.5, 0.5),
        9,
        9,
    );
    let cfg = LandscapeConfig { n_samples: 301, ..Default::default() };
    let map = landscape_brute(&shape, 3.0, &params, &grid, &cfg).unwrap();
    let uniform_mean = map.values.iter().sum::<f64>() / map.values.len() as f64;
    let origin = map.value_nearest_origin();

    let narrow = WeightModel { sigma_delta: 1e-6, sigma_kappa: 1e-6 };
    let wide = WeightModel { sigma_delta: 1e6, sigma_kappa: 1e6 };
    let a_narrow = average_fidelity_map(&map, &narrow);
    let a_wide = average_fidelity_map(&map, &wide);
    assert!((a_narrow - origin).abs() < 1e-9);
    assert!((a_wide - uniform_mean).abs() < 1e-9);

    // the two code paths agree on the same values
    let a_fn = average_fidelity_fn(
        |d, k| {
            let i = grid.delta.iter().position(|&x| (x - d).abs() < 1e-12).unwrap();
            let j = grid.kappa.iter().position(|&x| (x - k).abs() < 1e-12).unwrap();
            map.values[(i, j)]
        },
        &grid,
        &WeightModel::for_grid(&grid),
    );
    let a_map = average_fidelity_map(&map, &WeightModel::for_grid(&grid));
    assert!((a_fn - a_map).abs() < 1e-12);
}
