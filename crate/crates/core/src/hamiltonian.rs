//! Static Hamiltonian of the register, its eigensystem, and the
//! rotating-frame driving generator.
//!
//! The register is an NV electron spin (restricted to the {0, 1} subspace)
//! and two carbon-13 nuclear spins. The static Hamiltonian is block diagonal
//! over the electron quantum number: a 4x4 nuclear-sector block for ms = 0
//! and a diagonal hyperfine block for ms = 1. Product basis ordering is
//! {uu, ud, du, dd} within each electron block, electron ms = 0 first.
//!
//! Eigenstate labeling: psi_2 is the exact zero-eigenvalue singlet-like
//! state, psi_3 the near-zero state, psi_1/psi_4 the remaining nuclear-sector
//! pair by ascending eigenvalue, and psi_5..psi_8 the ms = 1 states by
//! ascending eigenvalue. Global phases are fixed by making each state's
//! largest-magnitude component real and positive.

use ndarray::array;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, ONE, ZERO};
use crate::units;

/// Relative eigenvalue separation below which the near-zero state cannot be
/// labeled.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Physical constants of the register. Angular frequencies in rad/us,
/// fields in gauss, times in us.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Zero-field splitting D.
    pub zfs: f64,
    /// Electron gyromagnetic ratio (rad/us/G).
    pub gamma_e: f64,
    /// Nuclear gyromagnetic ratio (rad/us/G).
    pub gamma_c: f64,
    /// Nuclear dipolar coupling.
    pub d12: f64,
    /// Isotropic hyperfine couplings of the two nuclei.
    pub azz: [f64; 2],
    /// Transverse magnetic field (G).
    pub bx: f64,
    /// Longitudinal magnetic field (G).
    pub bz: f64,
    /// Electron dephasing time (us).
    pub t2e: f64,
    /// Nuclear dephasing times (us).
    pub t2n: [f64; 2],
}

impl Default for SystemParams {
    /// Reference parameter set at the Bx = 100 G, Bz = 5 G operating point.
    fn default() -> Self {
        Self {
            zfs: units::mhz(2870.0),
            gamma_e: units::mhz(2.8),
            gamma_c: units::khz(1.7),
            d12: units::mhz(0.004),
            azz: [units::mhz(12.45), units::mhz(2.28)],
            bx: 100.0,
            bz: 5.0,
            t2e: 7.0,
            t2n: [500.0, 700.0],
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.zfs, self.gamma_e, self.gamma_c, self.d12, self.azz[0], self.azz[1], self.bx,
            self.bz,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite coupling".into()));
        }
        if self.t2e <= 0.0 || self.t2n[0] <= 0.0 || self.t2n[1] <= 0.0 {
            return Err(Error::InvalidParameter(
                "coherence times must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Static control-field imperfections: frequency detuning and relative
/// amplitude bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    /// Detuning delta (rad/us) applied to both tones.
    pub delta: f64,
    /// Relative amplitude bias kappa; the drive scales by (1 + kappa).
    pub kappa: f64,
}

impl Disturbance {
    pub const NONE: Disturbance = Disturbance { delta: 0.0, kappa: 0.0 };

    pub fn new(delta: f64, kappa: f64) -> Result<Self> {
        if !(kappa > -1.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa = {kappa} would cancel or invert the drive"
            )));
        }
        if !delta.is_finite() || !kappa.is_finite() {
            return Err(Error::InvalidParameter("non-finite disturbance".into()));
        }
        Ok(Self { delta, kappa })
    }
}

/// Which eigenstates the two tones address. Indices are 0-based into the
/// labeled eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriveSpec {
    /// Lower state addressed by the pump tone.
    pub p_lower: usize,
    /// Lower state addressed by the Stokes tone.
    pub s_lower: usize,
    /// Upper-manifold state both tone frequencies are referenced to.
    pub reference: usize,
}

impl Default for DriveSpec {
    /// The initialization task: psi_1 -> psi_6 -> psi_2.
    fn default() -> Self {
        Self { p_lower: 0, s_lower: 1, reference: 5 }
    }
}

/// How eigenstate indices were assigned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Labeling {
    /// Relative separation of the two smallest-|E| nuclear-sector candidates
    /// that guarded the near-zero assignment.
    pub near_zero_separation: f64,
    pub convention: String,
}

/// Energies, states and transition matrix of the static Hamiltonian.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// E_1..E_8 (rad/us).
    pub energies: [f64; 8],
    /// Columns are psi_1..psi_8 in the product basis.
    pub states: CMat,
    /// chi_ij = <psi_i| sqrt(2) Sx |psi_j>.
    pub chi: CMat,
    pub labeling: Labeling,
}

/// Nuclear-sector (ms = 0) and hyperfine (ms = 1) blocks of the static
/// Hamiltonian in the product basis {uu, ud, du, dd}.
///
/// The nuclear-sector couplings enter at twice their bare strength; this is
/// the normalization under which the sector's eigenvalues are exactly the
/// roots of the cubic evaluated by [`cubic_residual`].
pub fn build_static_blocks(params: &SystemParams) -> (CMat, CMat) {
    let a = 2.0 * params.gamma_c * params.bz;
    let b = 2.0 * params.gamma_c * params.bx;
    let d = 2.0 * params.d12;
    let r = |x: f64| C64::new(x, 0.0);
    let ms0 = array![
        [r(a - d / 2.0), r(b / 2.0), r(b / 2.0), ZERO],
        [r(b / 2.0), r(d / 2.0), r(d / 2.0), r(b / 2.0)],
        [r(b / 2.0), r(d / 2.0), r(d / 2.0), r(b / 2.0)],
        [ZERO, r(b / 2.0), r(b / 2.0), r(-a - d / 2.0)],
    ];
    let c = params.zfs + params.gamma_e * params.bz;
    let h1 = params.azz[0] / 2.0;
    let h2 = params.azz[1] / 2.0;
    let ms1 = CMat::from_diag(&CVec::from(vec![
        r(c + h1 + h2),
        r(c + h1 - h2),
        r(c - h1 + h2),
        r(c - h1 - h2),
    ]));
    (ms0, ms1)
}

/// Left-hand side of the nuclear-sector characteristic cubic at energy `e`;
/// zero exactly when `e` is a non-singlet ms = 0 eigenvalue.
pub fn cubic_residual(e: f64, params: &SystemParams) -> f64 {
    let d = params.d12;
    let gc2 = params.gamma_c * params.gamma_c;
    let bx2 = params.bx * params.bx;
    let bz2 = params.bz * params.bz;
    -2.0 * d * d * d - 4.0 * bx2 * d * gc2 + 8.0 * bz2 * d * gc2
        - (3.0 * d * d + 4.0 * bx2 * gc2 + 4.0 * bz2 * gc2) * e
        + e * e * e
}

/// The singlet combination (|ud> - |du>)/sqrt(2) as a nuclear 4-vector.
fn singlet() -> CVec {
    let s = 1.0 / 2f64.sqrt();
    CVec::from(vec![ZERO, C64::new(s, 0.0), C64::new(-s, 0.0), ZERO])
}

/// Fix the global phase so the largest-magnitude component is real positive.
fn fix_phase(v: &mut CVec) {
    let mut k = 0;
    let mut best = 0.0;
    for (i, z) in v.iter().enumerate() {
        if z.norm() > best {
            best = z.norm();
            k = i;
        }
    }
    if best == 0.0 {
        return;
    }
    let phase = v[k] / best;
    for z in v.iter_mut() {
        *z /= phase;
    }
}

/// Diagonalize the static Hamiltonian and label the eigenpairs.
pub fn diagonalize(params: &SystemParams) -> Result<EigenSystem> {
    params.validate()?;
    let (ms0, ms1) = build_static_blocks(params);
    let (vals0, vecs0) = linalg::eigh(&ms0);

    // The singlet is dark at every field; identify it by overlap and pin it
    // to its closed form so its chi zero pattern is exact.
    let s = singlet();
    let overlaps: Vec<f64> = (0..4)
        .map(|j| {
            (0..4)
                .map(|k| (vecs0[(k, j)].conj() * s[k]).re)
                .sum::<f64>()
                .abs()
        })
        .collect();
    let singlet_idx = (0..4)
        .max_by(|&i, &j| overlaps[i].partial_cmp(&overlaps[j]).unwrap())
        .unwrap();

    let rest: Vec<usize> = (0..4).filter(|&j| j != singlet_idx).collect();
    let scale = rest
        .iter()
        .map(|&j| vals0[j].abs())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut by_abs = rest.clone();
    by_abs.sort_by(|&i, &j| vals0[i].abs().partial_cmp(&vals0[j].abs()).unwrap());
    let separation = (vals0[by_abs[1]].abs() - vals0[by_abs[0]].abs()) / scale;
    if separation < DEGENERACY_TOL {
        return Err(Error::LabelingAmbiguity { separation, tolerance: DEGENERACY_TOL });
    }
    let near_zero = by_abs[0];
    let mut pair: Vec<usize> = rest.into_iter().filter(|&j| j != near_zero).collect();
    pair.sort_by(|&i, &j| vals0[i].partial_cmp(&vals0[j]).unwrap());

    // psi_1, psi_2 (singlet), psi_3 (near zero), psi_4
    let order0 = [pair[0], singlet_idx, near_zero, pair[1]];

    let mut energies = [0.0f64; 8];
    let mut states = CMat::zeros((8, 8));
    for (col, &j) in order0.iter().enumerate() {
        let mut v = CVec::from_shape_fn(4, |k| vecs0[(k, j)]);
        fix_phase(&mut v);
        for k in 0..4 {
            states[(k, col)] = v[k];
        }
        energies[col] = vals0[j];
    }
    // Pin the singlet exactly.
    energies[1] = 0.0;
    let s = singlet();
    for k in 0..4 {
        states[(k, 1)] = s[k];
    }

    // ms = 1 block is diagonal: eigenstates are product states, ascending.
    let e1: Vec<f64> = (0..4).map(|k| ms1[(k, k)].re).collect();
    let mut o1: Vec<usize> = (0..4).collect();
    o1.sort_by(|&i, &j| e1[i].partial_cmp(&e1[j]).unwrap());
    for (col, &k) in o1.iter().enumerate() {
        states[(4 + k, 4 + col)] = ONE;
        energies[4 + col] = e1[k];
    }

    let chi = transition_elements(&states);

    // The Stokes tone must couple psi_2 to exactly psi_6 and psi_7.
    let coupled = chi[(5, 1)].norm() > 1e-6 && chi[(6, 1)].norm() > 1e-6;
    let dark = chi[(4, 1)].norm() == 0.0 && chi[(7, 1)].norm() == 0.0;
    if !coupled || !dark {
        return Err(Error::LabelingAmbiguity {
            separation,
            tolerance: DEGENERACY_TOL,
        });
    }

    Ok(EigenSystem {
        energies,
        states,
        chi,
        labeling: Labeling {
            near_zero_separation: separation,
            convention: "psi2 = singlet (E = 0); psi3 = smallest |E| in the nuclear sector; \
                         psi1/psi4 and psi5..psi8 ascending; largest component real positive"
                .into(),
        },
    })
}

/// chi_ij = <psi_i| V |psi_j> with V = sqrt(2) Sx x 1 = |1><0| + |0><1| on
/// the electron. Entries within one electron block vanish identically and
/// are stored as exact zeros.
pub fn transition_elements(states: &CMat) -> CMat {
    let mut chi = CMat::zeros((8, 8));
    for i in 0..4 {
        for j in 4..8 {
            // <psi_i| V |psi_j>: V moves the ms = 1 amplitudes into the
            // ms = 0 rows, so this is a nuclear overlap.
            let mut z = ZERO;
            for k in 0..4 {
                z += states[(k, i)].conj() * states[(4 + k, j)];
            }
            chi[(i, j)] = z;
            chi[(j, i)] = z.conj();
        }
    }
    chi
}

/// Closed-form (alpha_j, beta_j) for the non-singlet nuclear-sector state
/// `j` in {1, 3, 4} (1-based). The matching unnormalized eigenvector is
/// given by [`analytic_eigenvector`].
pub fn analytic_coefficients(j: usize, params: &SystemParams) -> Result<(f64, f64)> {
    if params.bx == 0.0 {
        return Err(Error::DegenerateField);
    }
    if !matches!(j, 1 | 3 | 4) {
        return Err(Error::InvalidParameter(format!(
            "analytic coefficients exist for j in {{1, 3, 4}}, got {j}"
        )));
    }
    let eig = diagonalize(params)?;
    // The closed forms are written for the half-normalized sector; its
    // eigenvalues are half of ours.
    let e = eig.energies[j - 1] / 2.0;
    let a = params.gamma_c * params.bz;
    let b = params.gamma_c * params.bx;
    let d = params.d12;
    let alpha = (2.0 * d - 2.0 * e) * (-d - 2.0 * e - 2.0 * a) / (2.0 * b * b);
    let beta = (-d - 2.0 * e - 2.0 * a) / (2.0 * b);
    Ok((alpha, beta))
}

/// Unnormalized nuclear 4-vector built from the closed-form coefficients;
/// parallel to the numerically diagonalized psi_j.
pub fn analytic_eigenvector(j: usize, params: &SystemParams) -> Result<CVec> {
    let (alpha, beta) = analytic_coefficients(j, params)?;
    let r = |x: f64| C64::new(x, 0.0);
    Ok(CVec::from(vec![r(alpha - 1.0), r(-beta), r(-beta), ONE]))
}

/// Rotating-frame generator for the default drive assignment.
pub fn build_rwa_generator(
    eig: &EigenSystem,
    omega_p: f64,
    omega_s: f64,
    dist: Disturbance,
) -> CMat {
    build_rwa_generator_with(eig, &DriveSpec::default(), omega_p, omega_s, dist)
}

/// Rotating-frame generator: diagonal residual energies plus the two
/// near-resonant drive columns, scaled by (1 + kappa)/2, detuned by delta.
pub fn build_rwa_generator_with(
    eig: &EigenSystem,
    drive: &DriveSpec,
    omega_p: f64,
    omega_s: f64,
    dist: Disturbance,
) -> CMat {
    let mut h = CMat::zeros((8, 8));
    let e_ref = eig.energies[drive.reference];
    for j in 0..4 {
        if j != drive.p_lower && j != drive.s_lower {
            h[(j, j)] = C64::new(eig.energies[j], 0.0);
        }
    }
    for i in 4..8 {
        h[(i, i)] = C64::new(eig.energies[i] - e_ref - dist.delta, 0.0);
    }
    let gain = 0.5 * (1.0 + dist.kappa);
    for (lower, omega) in [(drive.p_lower, omega_p), (drive.s_lower, omega_s)] {
        for i in 4..8 {
            let z = eig.chi[(i, lower)] * (gain * omega);
            h[(i, lower)] += z;
            h[(lower, i)] += z.conj();
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Cross-implementation reference values for the default parameter set.
    const E_REF: [f64; 8] = [
        -2.12681318207401,
        0.0,
        -0.02494471631441,
        2.15175789838843,
        18074.43076611854849,
        18088.75642861891902,
        18152.65642319293329,
        18166.98208569330382,
    ];
    const CHI_P_REF: [f64; 4] = [
        0.53000860264770,
        -0.49492332849358,
        -0.49492332849358,
        0.47874072204598,
    ];

    #[test]
    fn ms1_block_is_diagonal_hyperfine() {
        let p = SystemParams::default();
        let (_, ms1) = build_static_blocks(&p);
        let c = p.zfs + p.gamma_e * p.bz;
        let want = [
            c + (p.azz[0] + p.azz[1]) / 2.0,
            c + (p.azz[0] - p.azz[1]) / 2.0,
            c + (-p.azz[0] + p.azz[1]) / 2.0,
            c - (p.azz[0] + p.azz[1]) / 2.0,
        ];
        for k in 0..4 {
            assert_abs_diff_eq!(ms1[(k, k)].re, want[k], epsilon = 1e-12);
            for l in 0..4 {
                if k != l {
                    assert_eq!(ms1[(k, l)], ZERO);
                }
            }
        }
    }

    #[test]
    fn zero_field_sector_is_pure_dipolar() {
        let p = SystemParams { bx: 0.0, bz: 0.0, ..SystemParams::default() };
        let (ms0, _) = build_static_blocks(&p);
        // singlet is dark, symmetric combination carries 2 d12
        let s = singlet();
        let hs = ms0.dot(&s);
        for k in 0..4 {
            assert!(hs[k].norm() < 1e-15);
        }
        let sym = CVec::from(vec![
            ZERO,
            C64::new(1.0 / 2f64.sqrt(), 0.0),
            C64::new(1.0 / 2f64.sqrt(), 0.0),
            ZERO,
        ]);
        let hsym = ms0.dot(&sym);
        for k in 0..4 {
            assert!((hsym[k] - sym[k] * (2.0 * p.d12)).norm() < 1e-12);
        }
        // and 2 d12 is a root of the cubic
        assert!(cubic_residual(2.0 * p.d12, &p).abs() < 1e-10 * p.d12.powi(3));
    }

    #[test]
    fn zero_field_labeling_is_ambiguous() {
        let p = SystemParams { bx: 0.0, bz: 0.0, ..SystemParams::default() };
        match diagonalize(&p) {
            Err(Error::LabelingAmbiguity { .. }) => {}
            other => panic!("expected LabelingAmbiguity, got {other:?}"),
        }
    }

    #[test]
    fn default_spectrum_matches_reference() {
        let eig = diagonalize(&SystemParams::default()).unwrap();
        for (have, want) in eig.energies.iter().zip(E_REF.iter()) {
            assert_abs_diff_eq!(have, want, epsilon = 1e-9);
        }
        assert_eq!(eig.energies[1], 0.0);
    }

    #[test]
    fn eigenvalues_are_cubic_roots() {
        let p = SystemParams::default();
        let eig = diagonalize(&p).unwrap();
        let emax = eig.energies[..4].iter().fold(0.0f64, |m, e| m.max(e.abs()));
        for j in [0, 2, 3] {
            let res = cubic_residual(eig.energies[j], &p).abs();
            assert!(
                res < 1e-8 * emax.powi(3),
                "residual {res:e} too large for E{}",
                j + 1
            );
        }
    }

    #[test]
    fn cubic_at_zero_energy_is_the_constant_term() {
        let p = SystemParams::default();
        let want = -2.0 * p.d12.powi(3) - 4.0 * p.bx.powi(2) * p.d12 * p.gamma_c.powi(2)
            + 8.0 * p.bz.powi(2) * p.d12 * p.gamma_c.powi(2);
        assert_abs_diff_eq!(cubic_residual(0.0, &p), want, epsilon = 1e-15);
        assert!(want != 0.0);
    }

    #[test]
    fn states_are_orthonormal() {
        let eig = diagonalize(&SystemParams::default()).unwrap();
        let g = linalg::dagger(&eig.states).dot(&eig.states);
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { ONE } else { ZERO };
                assert!((g[(i, j)] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn analytic_coefficients_build_parallel_vectors() {
        let p = SystemParams::default();
        let eig = diagonalize(&p).unwrap();
        for j in [1usize, 3, 4] {
            let v = analytic_eigenvector(j, &p).unwrap();
            let psi = CVec::from_shape_fn(4, |k| eig.states[(k, j - 1)]);
            let dot: C64 = v.iter().zip(psi.iter()).map(|(a, b)| a.conj() * b).sum();
            let nv: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let np: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let cos = dot.norm() / (nv * np);
            assert!(cos > 1.0 - 1e-10, "cosine similarity {cos} for psi_{j}");
        }
    }

    #[test]
    fn analytic_coefficients_need_transverse_field() {
        let p = SystemParams { bx: 0.0, ..SystemParams::default() };
        assert!(matches!(
            analytic_coefficients(1, &p),
            Err(Error::DegenerateField)
        ));
    }

    #[test]
    fn chi_zero_pattern_is_exact() {
        let eig = diagonalize(&SystemParams::default()).unwrap();
        let chi = &eig.chi;
        // singlet decouples from psi_5 and psi_8 exactly
        assert_eq!(chi[(1, 4)], ZERO);
        assert_eq!(chi[(1, 7)], ZERO);
        assert_eq!(chi[(4, 1)], ZERO);
        assert_eq!(chi[(7, 1)], ZERO);
        // block structure: same-electron-sector entries vanish identically
        for i in 0..8 {
            for j in 0..8 {
                if (i < 4) == (j < 4) {
                    assert_eq!(chi[(i, j)], ZERO);
                }
                assert!((chi[(i, j)] - chi[(j, i)].conj()).norm() < 1e-14);
            }
        }
        // Stokes couplings are the singlet overlaps +-1/sqrt(2)
        assert_abs_diff_eq!(chi[(5, 1)].re, -1.0 / 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(chi[(6, 1)].re, 1.0 / 2f64.sqrt(), epsilon = 1e-14);
        for (k, want) in CHI_P_REF.iter().enumerate() {
            assert_abs_diff_eq!(chi[(4 + k, 0)].re, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn labeling_is_stable_over_the_field_grid() {
        for &bx in &[1.0, 3.0, 10.0, 30.0, 100.0] {
            for &bz in &[1.0, 3.0, 10.0, 30.0, 100.0] {
                let p = SystemParams { bx, bz, ..SystemParams::default() };
                let eig = diagonalize(&p).unwrap_or_else(|e| {
                    panic!("labeling failed at Bx={bx}, Bz={bz}: {e}")
                });
                let [e1, _, e3, e4, ..] = eig.energies;
                assert!((e3 / e1).abs() < 1.0, "E3/E1 at Bx={bx}, Bz={bz}");
                assert!((e3 / e4).abs() < 1.0, "E3/E4 at Bx={bx}, Bz={bz}");
            }
        }
    }

    #[test]
    fn rwa_generator_nominal_case() {
        let eig = diagonalize(&SystemParams::default()).unwrap();
        let (op, os) = (0.7, 0.3);
        let h = build_rwa_generator(&eig, op, os, Disturbance::NONE);
        assert!(linalg::hermiticity_defect(&h) < 1e-12 * linalg::norm_1(&h));
        // explicit element-wise expectation
        let e = &eig.energies;
        assert_eq!(h[(0, 0)], ZERO);
        assert_eq!(h[(1, 1)], ZERO);
        assert_abs_diff_eq!(h[(2, 2)].re, e[2], epsilon = 1e-12);
        assert_abs_diff_eq!(h[(3, 3)].re, e[3], epsilon = 1e-12);
        for i in 4..8 {
            assert_abs_diff_eq!(h[(i, i)].re, e[i] - e[5], epsilon = 1e-9);
        }
        for i in 4..8 {
            assert!((h[(i, 0)] - eig.chi[(i, 0)] * (op / 2.0)).norm() < 1e-14);
            assert!((h[(i, 1)] - eig.chi[(i, 1)] * (os / 2.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn rwa_generator_drive_off_is_diagonal() {
        let eig = diagonalize(&SystemParams::default()).unwrap();
        let d = Disturbance { delta: 0.45, kappa: 0.0 };
        let h = build_rwa_generator(&eig, 0.0, 0.0, d);
        let e = &eig.energies;
        let want = [
            0.0,
            0.0,
            e[2],
            e[3],
            e[4] - e[5] - d.delta,
            -d.delta,
            e[6] - e[5] - d.delta,
            e[7] - e[5] - d.delta,
        ];
        for i in 0..8 {
            for j in 0..8 {
                if i == j {
                    assert_abs_diff_eq!(h[(i, j)].re, want[i], epsilon = 1e-9);
                } else {
                    assert_eq!(h[(i, j)], ZERO);
                }
            }
        }
    }

    #[test]
    fn rwa_generator_kappa_scales_drive_linearly() {
        let eig = diagonalize(&SystemParams::default()).unwrap();
        let h0 = build_rwa_generator(&eig, 0.9, 0.4, Disturbance::NONE);
        let h1 = build_rwa_generator(&eig, 0.9, 0.4, Disturbance { delta: 0.0, kappa: 1.0 });
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert!((h1[(i, j)] - h0[(i, j)] * 2.0).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn rwa_generator_ignores_identity_shift_of_upper_block() {
        let p = SystemParams::default();
        let mut eig = diagonalize(&p).unwrap();
        let h0 = build_rwa_generator(&eig, 0.8, 0.6, Disturbance { delta: 0.1, kappa: 0.2 });
        for i in 4..8 {
            eig.energies[i] += 123.456;
        }
        let h1 = build_rwa_generator(&eig, 0.8, 0.6, Disturbance { delta: 0.1, kappa: 0.2 });
        for i in 0..8 {
            for j in 0..8 {
                assert!((h1[(i, j)] - h0[(i, j)]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn disturbance_rejects_drive_inversion() {
        assert!(Disturbance::new(0.0, -1.0).is_err());
        assert!(Disturbance::new(0.0, -0.999).is_ok());
    }

    #[test]
    fn flip_flop_drive_addresses_the_protected_pair() {
        // the psi_2 <-> psi_3 task: both tones referenced to psi_6
        let eig = diagonalize(&SystemParams::default()).unwrap();
        let drive = DriveSpec { p_lower: 1, s_lower: 2, reference: 5 };
        let h = build_rwa_generator_with(&eig, &drive, 0.8, 0.6, Disturbance::NONE);
        // untouched lower states keep their energies on the diagonal
        assert_abs_diff_eq!(h[(0, 0)].re, eig.energies[0], epsilon = 1e-12);
        assert_abs_diff_eq!(h[(3, 3)].re, eig.energies[3], epsilon = 1e-12);
        assert_eq!(h[(1, 1)], ZERO);
        assert_eq!(h[(2, 2)], ZERO);
        // drive columns follow the chi structure of the addressed states
        for i in 4..8 {
            assert!((h[(i, 1)] - eig.chi[(i, 1)] * 0.4).norm() < 1e-14);
            assert!((h[(i, 2)] - eig.chi[(i, 2)] * 0.3).norm() < 1e-14);
        }
        // psi_1 is not driven at all in this task
        for i in 4..8 {
            assert_eq!(h[(i, 0)], ZERO);
        }
        assert!(linalg::hermiticity_defect(&h) < 1e-14);
    }
}
