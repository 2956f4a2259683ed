//! Derivative-free simplex minimizer.

/// Termination and budget settings.
#[derive(Debug, Clone)]
pub struct NmConfig {
    /// Stop when the simplex objective spread falls below this.
    pub f_tol: f64,
    /// Hard cap on objective evaluations.
    pub max_evals: usize,
}

impl Default for NmConfig {
    fn default() -> Self {
        Self { f_tol: 1e-4, max_evals: 4000 }
    }
}

#[derive(Debug, Clone)]
pub struct NmOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub n_evals: usize,
    /// Every objective call in evaluation order.
    pub trace: Vec<(usize, f64)>,
    /// True when the evaluation budget ran out before the spread tolerance
    /// was met; the outcome still carries the best point seen.
    pub budget_exhausted: bool,
}

/// Minimize `f` starting from the given non-degenerate simplex
/// (dim + 1 vertexes). Reflect/expand/contract/shrink with the standard
/// coefficients; terminates on objective spread or budget.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    initial_vertexes: Vec<Vec<f64>>,
    cfg: &NmConfig,
) -> NmOutcome {
    let n = initial_vertexes[0].len();
    assert!(
        initial_vertexes.len() == n + 1,
        "need dim + 1 vertexes, got {} for dim {}",
        initial_vertexes.len(),
        n
    );
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const RHO: f64 = 0.5; // contraction
    const SIGMA: f64 = 0.5; // shrink

    let mut trace: Vec<(usize, f64)> = Vec::new();
    let mut n_evals = 0usize;
    let mut budget_exhausted = false;

    let mut eval = |x: &[f64], n_evals: &mut usize, trace: &mut Vec<(usize, f64)>| -> f64 {
        let v = f(x);
        trace.push((*n_evals, v));
        *n_evals += 1;
        v
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = initial_vertexes
        .into_iter()
        .map(|x| {
            let v = eval(&x, &mut n_evals, &mut trace);
            (x, v)
        })
        .collect();

    loop {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[n].1 - simplex[0].1;
        if spread <= cfg.f_tol {
            break;
        }
        if n_evals >= cfg.max_evals {
            budget_exhausted = true;
            break;
        }

        // centroid of all but the worst
        let mut centroid = vec![0.0; n];
        for (x, _) in simplex.iter().take(n) {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let point = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = point(ALPHA);
        let fr = eval(&xr, &mut n_evals, &mut trace);
        if fr < simplex[0].1 {
            let xe = point(GAMMA);
            let fe = eval(&xe, &mut n_evals, &mut trace);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // contraction (outside if the reflection helped at all)
        let (xc, fc) = if fr < worst.1 {
            let xc = point(RHO);
            let fc = eval(&xc, &mut n_evals, &mut trace);
            (xc, fc)
        } else {
            let xc = point(-RHO);
            let fc = eval(&xc, &mut n_evals, &mut trace);
            (xc, fc)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for k in 1..=n {
            let x: Vec<f64> = simplex[k]
                .0
                .iter()
                .zip(&best)
                .map(|(xi, bi)| bi + SIGMA * (xi - bi))
                .collect();
            let v = eval(&x, &mut n_evals, &mut trace);
            simplex[k] = (x, v);
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    NmOutcome {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        n_evals,
        trace,
        budget_exhausted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_a_quadratic() {
        let target = [1.25, -0.75];
        let f = |x: &[f64]| (x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2);
        let simplex = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let out = nelder_mead(f, simplex, &NmConfig { f_tol: 1e-10, max_evals: 2000 });
        assert!((out.x[0] - target[0]).abs() < 1e-3);
        assert!((out.x[1] - target[1]).abs() < 1e-3);
        assert!(!out.budget_exhausted);
    }

    #[test]
    fn every_evaluation_is_traced() {
        let f = |x: &[f64]| x[0] * x[0];
        let simplex = vec![vec![3.0], vec![5.0]];
        let out = nelder_mead(f, simplex, &NmConfig::default());
        assert_eq!(out.n_evals, out.trace.len());
        for (i, (idx, _)) in out.trace.iter().enumerate() {
            assert_eq!(i, *idx);
        }
    }

    #[test]
    fn identical_inputs_give_identical_outcomes() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + (x[1] + 1.1).powi(4) + x[2].abs();
        let simplex = vec![
            vec![0.1, 0.2, 0.3],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let a = nelder_mead(f, simplex.clone(), &NmConfig::default());
        let b = nelder_mead(f, simplex, &NmConfig::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.value, b.value);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let simplex = vec![vec![10.0, 10.0], vec![11.0, 10.0], vec![10.0, 11.0]];
        let out = nelder_mead(f, simplex, &NmConfig { f_tol: 1e-16, max_evals: 10 });
        assert!(out.budget_exhausted);
        assert_eq!(out.n_evals, 10);
    }
}
