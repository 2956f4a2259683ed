//! Open-system propagation of the driven register and transfer fidelity.
//!
//! States are 8x8 density matrices expressed in the labeled eigenbasis.
//! Between the uniform field samples the drive amplitudes are held constant,
//! so the generator is piecewise constant and the reference integrator can
//! exponentiate it slice by slice.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{
    build_rwa_generator_with, diagonalize, Disturbance, DriveSpec, EigenSystem, SystemParams,
};
use crate::linalg::{self, CMat, CVec, I, ZERO};

/// Dimension of the register Hilbert space.
pub const DIM: usize = 8;

/// Trace drift beyond which the stepping is declared too coarse.
pub const TRACE_TOL: f64 = 1e-6;

/// Uniformly sampled drive amplitudes over [0, T]. The value at instant i
/// is held constant over the slice [t_i, t_{i+1}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledField {
    /// Total duration (us).
    pub t_total: f64,
    /// Uniform instant grid from 0 to T.
    pub times: Vec<f64>,
    /// Pump amplitudes (rad/us) at the instants.
    pub omega_p: Vec<f64>,
    /// Stokes amplitudes (rad/us) at the instants.
    pub omega_s: Vec<f64>,
}

impl SampledField {
    pub fn n_slices(&self) -> usize {
        self.times.len() - 1
    }

    pub fn slice_width(&self) -> f64 {
        self.t_total / self.n_slices() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() < 2
            || self.times.len() != self.omega_p.len()
            || self.times.len() != self.omega_s.len()
        {
            return Err(Error::InvalidParameter(
                "field needs equal-length time and amplitude grids (>= 2 samples)".into(),
            ));
        }
        if !self
            .omega_p
            .iter()
            .chain(self.omega_s.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidParameter("non-finite field sample".into()));
        }
        Ok(())
    }

    /// Largest absolute amplitude over both tones.
    pub fn max_amplitude(&self) -> f64 {
        self.omega_p
            .iter()
            .chain(self.omega_s.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Validated density matrix in the eigenbasis: Hermitian, unit trace,
/// nonnegative up to a small tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: CMat,
}

impl DensityMatrix {
    pub fn new(rho: CMat) -> Result<Self> {
        if rho.dim() != (DIM, DIM) {
            return Err(Error::InvalidParameter("density matrix must be 8x8".into()));
        }
        let herm = linalg::hermiticity_defect(&rho);
        if herm > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "density matrix is not Hermitian (defect {herm:.3e})"
            )));
        }
        let tr = linalg::trace(&rho);
        if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "density matrix trace {tr} is not 1"
            )));
        }
        let min_eig = linalg::min_eigenvalue(&rho);
        if min_eig < -1e-8 {
            return Err(Error::InvalidParameter(format!(
                "density matrix has negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { rho })
    }

    /// |psi_index><psi_index| (0-based eigenstate index).
    pub fn pure_state(index: usize) -> Self {
        let mut rho = CMat::zeros((DIM, DIM));
        rho[(index, index)] = C64::new(1.0, 0.0);
        Self { rho }
    }

    pub fn maximally_mixed() -> Self {
        let mut rho = CMat::zeros((DIM, DIM));
        for i in 0..DIM {
            rho[(i, i)] = C64::new(1.0 / DIM as f64, 0.0);
        }
        Self { rho }
    }

    pub fn matrix(&self) -> &CMat {
        &self.rho
    }

    pub fn purity(&self) -> f64 {
        purity_of(&self.rho)
    }
}

/// Population of the target eigenstate (0-based index).
pub fn fidelity(rho: &DensityMatrix, target: usize) -> f64 {
    assert!(target < DIM, "eigenstate index out of range");
    let z = rho.rho[(target, target)];
    assert!(
        z.im.abs() < 1e-10,
        "diagonal element has imaginary part {:.3e}",
        z.im
    );
    z.re
}

fn purity_of(rho: &CMat) -> f64 {
    let mut s = 0.0;
    for i in 0..DIM {
        for j in 0..DIM {
            s += (rho[(i, j)] * rho[(j, i)]).re;
        }
    }
    s
}

/// Dephasing channels prepared for a given eigensystem: Hermitian jump
/// operators in the eigenbasis with their rates.
#[derive(Debug, Clone)]
pub struct DissipatorSet {
    ops: Vec<(CMat, f64)>,
    ops_sq: Vec<CMat>,
    /// Entrywise decay rates of the product-basis coherences.
    gamma_prod: Array2<f64>,
}

impl DissipatorSet {
    pub fn new(params: &SystemParams, eig: &EigenSystem) -> Self {
        let w = &eig.states;
        let wd = linalg::dagger(w);
        // product-basis diagonals of the three dephasing operators
        let sz = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let iz1 = [0.5, 0.5, -0.5, -0.5, 0.5, 0.5, -0.5, -0.5];
        let iz2 = [0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5];
        let rates = [1.0 / params.t2e, 1.0 / params.t2n[0], 1.0 / params.t2n[1]];

        let mut ops = Vec::new();
        let mut ops_sq = Vec::new();
        let mut gamma_prod = Array2::<f64>::zeros((DIM, DIM));
        for (diag, rate) in [sz, iz1, iz2].iter().zip(rates) {
            let d = CMat::from_diag(&CVec::from(
                diag.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>(),
            ));
            let op_eig = wd.dot(&d).dot(w);
            ops_sq.push(op_eig.dot(&op_eig));
            ops.push((op_eig, rate));
            for i in 0..DIM {
                for j in 0..DIM {
                    let df = diag[i] - diag[j];
                    gamma_prod[(i, j)] += rate * df * df;
                }
            }
        }
        Self { ops, ops_sq, gamma_prod }
    }
}

/// Right-hand side of the master equation: -i[H, rho] plus the electron and
/// nuclear pure-dephasing terms.
pub fn lindblad_rhs(rho: &CMat, h: &CMat, diss: &DissipatorSet) -> CMat {
    let mut out = h.dot(rho) - rho.dot(h);
    out.mapv_inplace(|z| z * (-I));
    for ((op, rate), op_sq) in diss.ops.iter().zip(diss.ops_sq.iter()) {
        let lrl = op.dot(rho).dot(op);
        let l2r = op_sq.dot(rho);
        let rl2 = rho.dot(op_sq);
        let r = C64::new(*rate, 0.0);
        out = out + (lrl.mapv(|z| z * 2.0) - l2r - rl2).mapv(|z| z * r);
    }
    out
}

/// Integration scheme for one field slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    /// Exponential of the 64x64 Liouvillian per slice; exact for the
    /// piecewise-constant generator. The reference path.
    Expm { substeps: usize },
    /// Fixed-step fourth-order Runge-Kutta.
    Rk4 { substeps: usize },
    /// Exact unitary step interleaved with the exact dephasing map
    /// (Strang splitting). Fast inner-loop path.
    Split { substeps: usize },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::Expm { substeps: 1 }
    }
}

impl Integrator {
    /// Fast inner-loop default used by the optimizers.
    pub fn fast() -> Self {
        Integrator::Split { substeps: 1 }
    }

    pub fn rk4() -> Self {
        Integrator::Rk4 { substeps: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct PropagateOptions {
    pub integrator: Integrator,
    pub drive: DriveSpec,
    /// Record a checkpoint every this many slices (the initial and final
    /// states are always recorded).
    pub checkpoint_stride: usize,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self {
            integrator: Integrator::default(),
            drive: DriveSpec::default(),
            checkpoint_stride: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub t: f64,
    /// State in the eigenbasis, hermitized and trace-renormalized.
    pub rho: CMat,
    pub populations: [f64; DIM],
    pub purity: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub checkpoints: Vec<Checkpoint>,
    /// Largest |trace - 1| observed before renormalization.
    pub max_trace_drift: f64,
    /// Largest Hermitian-part adjustment applied at a checkpoint.
    pub max_hermiticity_fix: f64,
}

impl Trajectory {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("trajectory is never empty")
    }

    pub fn final_density(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.final_checkpoint().rho.clone())
    }

    /// Population of the target eigenstate at the end of the run.
    pub fn final_fidelity(&self, target: usize) -> f64 {
        self.final_checkpoint().populations[target]
    }
}

struct Recorder {
    checkpoints: Vec<Checkpoint>,
    max_trace_drift: f64,
    max_hermiticity_fix: f64,
}

impl Recorder {
    fn new() -> Self {
        Self {
            checkpoints: Vec::new(),
            max_trace_drift: 0.0,
            max_hermiticity_fix: 0.0,
        }
    }

    /// Restore invariants on a raw integrator state and store it.
    fn record(&mut self, t: f64, rho_raw: &CMat) -> Result<()> {
        let fix = linalg::hermiticity_defect(rho_raw);
        let mut rho = linalg::hermitize(rho_raw);
        let tr = linalg::trace(&rho).re;
        let drift = (tr - 1.0).abs();
        if drift > TRACE_TOL {
            return Err(Error::StepUnstable { trace_error: drift, t_us: t });
        }
        rho.mapv_inplace(|z| z / tr);
        let mut populations = [0.0; DIM];
        for i in 0..DIM {
            populations[i] = rho[(i, i)].re;
        }
        let purity = purity_of(&rho);
        self.max_trace_drift = self.max_trace_drift.max(drift);
        self.max_hermiticity_fix = self.max_hermiticity_fix.max(fix);
        self.checkpoints.push(Checkpoint { t, rho, populations, purity });
        Ok(())
    }
}

/// Propagate the master equation under a sampled field with static
/// disturbance. Deterministic for fixed inputs.
pub fn propagate(
    field: &SampledField,
    dist: Disturbance,
    params: &SystemParams,
    initial: &DensityMatrix,
    opts: &PropagateOptions,
) -> Result<Trajectory> {
    field.validate()?;
    let eig = diagonalize(params)?;
    propagate_with_eigensystem(field, dist, params, &eig, initial, opts)
}

/// As [`propagate`] but reusing a prepared eigensystem (the optimizers call
/// this in their inner loops).
pub fn propagate_with_eigensystem(
    field: &SampledField,
    dist: Disturbance,
    params: &SystemParams,
    eig: &EigenSystem,
    initial: &DensityMatrix,
    opts: &PropagateOptions,
) -> Result<Trajectory> {
    let diss = DissipatorSet::new(params, eig);
    let n_slices = field.n_slices();
    let dt = field.slice_width();
    let stride = opts.checkpoint_stride.max(1);

    let mut rec = Recorder::new();
    match opts.integrator {
        Integrator::Expm { substeps } => {
            let substeps = substeps.max(1);
            let mut v = vectorize(initial.matrix());
            let static_part = dissipator_superop(&diss);
            rec.record(0.0, initial.matrix())?;
            let mut l_buf = CMat::zeros((DIM * DIM, DIM * DIM));
            for k in 0..n_slices {
                let h = build_rwa_generator_with(
                    eig,
                    &opts.drive,
                    field.omega_p[k],
                    field.omega_s[k],
                    dist,
                );
                let dt_sub = dt / substeps as f64;
                assemble_liouvillian(&static_part, &h, dt_sub, &mut l_buf);
                for _ in 0..substeps {
                    v = linalg::expm_apply(&l_buf, &v);
                }
                if k + 1 == n_slices || (k + 1) % stride == 0 {
                    rec.record(field.times[k + 1], &unvectorize(&v))?;
                }
            }
        }
        Integrator::Rk4 { substeps } => {
            let substeps = substeps.max(1);
            let mut rho = initial.matrix().clone();
            rec.record(0.0, &rho)?;
            for k in 0..n_slices {
                let h = build_rwa_generator_with(
                    eig,
                    &opts.drive,
                    field.omega_p[k],
                    field.omega_s[k],
                    dist,
                );
                let dt_sub = dt / substeps as f64;
                for _ in 0..substeps {
                    rho = rk4_step(&rho, &h, &diss, dt_sub);
                }
                if k + 1 == n_slices || (k + 1) % stride == 0 {
                    rec.record(field.times[k + 1], &rho)?;
                }
            }
        }
        Integrator::Split { substeps } => {
            let substeps = substeps.max(1);
            let w = &eig.states;
            let wd = linalg::dagger(w);
            rec.record(0.0, initial.matrix())?;
            let dt_sub = dt / substeps as f64;
            let half = half_dephasing_map(&diss, dt_sub);

            // Product-basis generator pieces; per slice the Hamiltonian is
            // an axpy of these three.
            let h0 = build_rwa_generator_with(eig, &opts.drive, 0.0, 0.0, dist);
            let vp = {
                let v = build_rwa_generator_with(eig, &opts.drive, 1.0, 0.0, dist);
                v - &h0
            };
            let vs = {
                let v = build_rwa_generator_with(eig, &opts.drive, 0.0, 1.0, dist);
                v - &h0
            };
            let to_prod = |m: &CMat| fast8::from_cmat(&w.dot(m).dot(&wd));
            let h0_p = to_prod(&h0);
            let vp_p = to_prod(&vp);
            let vs_p = to_prod(&vs);
            let half_f = fast8::from_real(&half);

            // work in the product basis where the dephasing map is entrywise
            let mut rho = fast8::from_cmat(&w.dot(initial.matrix()).dot(&wd));
            let mut ws = fast8::Workspace::new();
            for k in 0..n_slices {
                let mut h = [ZERO; 64];
                let (up, us) = (field.omega_p[k], field.omega_s[k]);
                for i in 0..64 {
                    // -i dt (H0 + up Vp + us Vs)
                    h[i] = (h0_p[i] + vp_p[i] * up + vs_p[i] * us) * (-I * dt_sub);
                }
                let u = fast8::expm(&h, &mut ws);
                for _ in 0..substeps {
                    fast8::hadamard(&mut rho, &half_f);
                    fast8::sandwich(&u, &mut rho, &mut ws);
                    fast8::hadamard(&mut rho, &half_f);
                }
                if k + 1 == n_slices || (k + 1) % stride == 0 {
                    let rho_prod = fast8::to_cmat(&rho);
                    let rho_eig = wd.dot(&rho_prod).dot(w);
                    rec.record(field.times[k + 1], &rho_eig)?;
                }
            }
        }
    }

    Ok(Trajectory {
        checkpoints: rec.checkpoints,
        max_trace_drift: rec.max_trace_drift,
        max_hermiticity_fix: rec.max_hermiticity_fix,
    })
}

/// Convenience: propagate from |psi_1><psi_1| and return the population of
/// psi_2 at time T.
pub fn transfer_fidelity(
    field: &SampledField,
    dist: Disturbance,
    params: &SystemParams,
    opts: &PropagateOptions,
) -> Result<f64> {
    let traj = propagate(field, dist, params, &DensityMatrix::pure_state(0), opts)?;
    Ok(traj.final_fidelity(1))
}

fn rk4_step(rho: &CMat, h: &CMat, diss: &DissipatorSet, dt: f64) -> CMat {
    let k1 = lindblad_rhs(rho, h, diss);
    let r2 = rho + &k1.mapv(|z| z * (dt / 2.0));
    let k2 = lindblad_rhs(&r2, h, diss);
    let r3 = rho + &k2.mapv(|z| z * (dt / 2.0));
    let k3 = lindblad_rhs(&r3, h, diss);
    let r4 = rho + &k3.mapv(|z| z * dt);
    let k4 = lindblad_rhs(&r4, h, diss);
    rho + &(k1 + k2.mapv(|z| z * 2.0) + k3.mapv(|z| z * 2.0) + k4).mapv(|z| z * (dt / 6.0))
}

/// Column-stacked vectorization, v[i + 8 j] = rho[i, j].
pub(crate) fn vectorize(rho: &CMat) -> CVec {
    CVec::from_shape_fn(DIM * DIM, |r| rho[(r % DIM, r / DIM)])
}

pub(crate) fn unvectorize(v: &CVec) -> CMat {
    CMat::from_shape_fn((DIM, DIM), |(i, j)| v[i + DIM * j])
}

/// Static dissipator part of the Liouvillian in column-stacked form.
pub(crate) fn dissipator_superop(diss: &DissipatorSet) -> CMat {
    let n = DIM * DIM;
    let mut l = CMat::zeros((n, n));
    for ((op, rate), op_sq) in diss.ops.iter().zip(diss.ops_sq.iter()) {
        let r = *rate;
        for i in 0..DIM {
            for j in 0..DIM {
                for k in 0..DIM {
                    for m in 0..DIM {
                        // 2 L rho L term
                        l[(i + DIM * j, k + DIM * m)] +=
                            op[(i, k)] * op[(m, j)] * (2.0 * r);
                    }
                    // -L^2 rho and -rho L^2 terms
                    l[(i + DIM * j, k + DIM * j)] -= op_sq[(i, k)] * r;
                    l[(i + DIM * j, i + DIM * k)] -= op_sq[(k, j)] * r;
                }
            }
        }
    }
    l
}

/// l_buf = dt * (static dissipator - i [H, .]).
pub(crate) fn assemble_liouvillian(static_part: &CMat, h: &CMat, dt: f64, l_buf: &mut CMat) {
    let dt_c = C64::new(dt, 0.0);
    l_buf.assign(static_part);
    l_buf.mapv_inplace(|z| z * dt_c);
    for j in 0..DIM {
        for i in 0..DIM {
            for k in 0..DIM {
                // -i H rho
                l_buf[(i + DIM * j, k + DIM * j)] += -I * h[(i, k)] * dt_c;
                // +i rho H
                l_buf[(i + DIM * j, i + DIM * k)] += I * h[(k, j)] * dt_c;
            }
        }
    }
}

/// exp(-Gamma dt/2) entrywise factors of the product-basis dephasing map.
fn half_dephasing_map(diss: &DissipatorSet, dt: f64) -> Array2<f64> {
    Array2::from_shape_fn((DIM, DIM), |(i, j)| {
        (-diss.gamma_prod[(i, j)] * dt / 2.0).exp()
    })
}

/// Flat fixed-size 8x8 complex kernels for the split integrator's hot loop;
/// no allocation inside the slice loop.
mod fast8 {
    use super::{Array2, C64, CMat, DIM, ZERO};

    pub(super) type A64 = [C64; 64];

    pub(super) struct Workspace {
        t: [A64; 8],
    }

    impl Workspace {
        pub(super) fn new() -> Self {
            Self { t: [[ZERO; 64]; 8] }
        }
    }

    pub(super) fn from_cmat(m: &CMat) -> A64 {
        let mut out = [ZERO; 64];
        for i in 0..DIM {
            for j in 0..DIM {
                out[i * DIM + j] = m[(i, j)];
            }
        }
        out
    }

    pub(super) fn to_cmat(a: &A64) -> CMat {
        CMat::from_shape_fn((DIM, DIM), |(i, j)| a[i * DIM + j])
    }

    pub(super) fn from_real(m: &Array2<f64>) -> [f64; 64] {
        let mut out = [0.0; 64];
        for i in 0..DIM {
            for j in 0..DIM {
                out[i * DIM + j] = m[(i, j)];
            }
        }
        out
    }

    pub(super) fn hadamard(rho: &mut A64, f: &[f64; 64]) {
        for k in 0..64 {
            rho[k] *= f[k];
        }
    }

    fn mul(a: &A64, b: &A64, out: &mut A64) {
        *out = [ZERO; 64];
        for i in 0..DIM {
            for k in 0..DIM {
                let aik = a[i * DIM + k];
                if aik == ZERO {
                    continue;
                }
                for j in 0..DIM {
                    out[i * DIM + j] += aik * b[k * DIM + j];
                }
            }
        }
    }

    /// rho = u rho u^dagger.
    pub(super) fn sandwich(u: &A64, rho: &mut A64, ws: &mut Workspace) {
        mul(u, rho, &mut ws.t[0]);
        let tmp = ws.t[0];
        for i in 0..DIM {
            for j in 0..DIM {
                let mut acc = ZERO;
                for k in 0..DIM {
                    acc += tmp[i * DIM + k] * u[j * DIM + k].conj();
                }
                rho[i * DIM + j] = acc;
            }
        }
    }

    fn norm_1(a: &A64) -> f64 {
        let mut best = 0.0f64;
        for j in 0..DIM {
            let mut s = 0.0;
            for i in 0..DIM {
                s += a[i * DIM + j].norm();
            }
            best = best.max(s);
        }
        best
    }

    /// Solve a x = b in place for 8 right-hand sides; returns x in b.
    fn lu_solve(a: &mut A64, b: &mut A64) {
        for k in 0..DIM {
            let mut piv = k;
            let mut best = a[k * DIM + k].norm();
            for i in (k + 1)..DIM {
                let v = a[i * DIM + k].norm();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if piv != k {
                for j in 0..DIM {
                    a.swap(k * DIM + j, piv * DIM + j);
                    b.swap(k * DIM + j, piv * DIM + j);
                }
            }
            let akk = a[k * DIM + k];
            for i in (k + 1)..DIM {
                let f = a[i * DIM + k] / akk;
                if f == ZERO {
                    continue;
                }
                for j in (k + 1)..DIM {
                    let v = a[k * DIM + j];
                    a[i * DIM + j] -= f * v;
                }
                for j in 0..DIM {
                    let v = b[k * DIM + j];
                    b[i * DIM + j] -= f * v;
                }
                a[i * DIM + k] = f;
            }
        }
        for k in (0..DIM).rev() {
            let akk = a[k * DIM + k];
            for j in 0..DIM {
                let mut s = b[k * DIM + j];
                for i in (k + 1)..DIM {
                    s -= a[k * DIM + i] * b[i * DIM + j];
                }
                b[k * DIM + j] = s / akk;
            }
        }
    }

    const PADE_B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371_920_351_148_152;

    /// Pade order-13 matrix exponential with scaling and squaring.
    pub(super) fn expm(a: &A64, ws: &mut Workspace) -> A64 {
        let nrm = norm_1(a);
        let s = if nrm > THETA_13 {
            (nrm / THETA_13).log2().ceil() as i32
        } else {
            0
        };
        let scale = 2f64.powi(-s);
        let mut a1 = [ZERO; 64];
        for k in 0..64 {
            a1[k] = a[k] * scale;
        }

        let [a2, a4, a6, u, v, lhs, rhs, tmp] = &mut ws.t;
        mul(&a1, &a1, a2);
        mul(a2, a2, a4);
        mul(a2, a4, a6);

        // u = a1 (a6 (b13 a6 + b11 a4 + b9 a2) + b7 a6 + b5 a4 + b3 a2 + b1 I)
        for k in 0..64 {
            tmp[k] = a6[k] * PADE_B[13] + a4[k] * PADE_B[11] + a2[k] * PADE_B[9];
        }
        mul(a6, tmp, u);
        for k in 0..64 {
            u[k] += a6[k] * PADE_B[7] + a4[k] * PADE_B[5] + a2[k] * PADE_B[3];
        }
        for i in 0..DIM {
            u[i * DIM + i] += PADE_B[1];
        }
        mul(&a1, u, tmp);
        let u = *tmp;

        // v = a6 (b12 a6 + b10 a4 + b8 a2) + b6 a6 + b4 a4 + b2 a2 + b0 I
        for k in 0..64 {
            lhs[k] = a6[k] * PADE_B[12] + a4[k] * PADE_B[10] + a2[k] * PADE_B[8];
        }
        mul(a6, lhs, v);
        for k in 0..64 {
            v[k] += a6[k] * PADE_B[6] + a4[k] * PADE_B[4] + a2[k] * PADE_B[2];
        }
        for i in 0..DIM {
            v[i * DIM + i] += PADE_B[0];
        }

        for k in 0..64 {
            lhs[k] = v[k] - u[k];
            rhs[k] = v[k] + u[k];
        }
        lu_solve(lhs, rhs);
        let mut r = *rhs;
        for _ in 0..s {
            let mut sq = [ZERO; 64];
            mul(&r, &r, &mut sq);
            r = sq;
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulses::{sample, PulseShape, ShapeKind};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn params() -> SystemParams {
        SystemParams::default()
    }

    fn no_decoherence() -> SystemParams {
        SystemParams {
            t2e: f64::INFINITY,
            t2n: [f64::INFINITY, f64::INFINITY],
            ..SystemParams::default()
        }
    }

    fn random_crab(rng: &mut impl Rng, amp: f64) -> PulseShape {
        PulseShape::new(ShapeKind::CrabBasis {
            coeffs: (0..3)
                .map(|_| std::array::from_fn(|_| rng.gen_range(-amp..amp)))
                .collect(),
            freq_jitter: (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        })
    }

    #[test]
    fn rhs_vanishes_on_diagonal_states_without_drive() {
        let p = params();
        let eig = diagonalize(&p).unwrap();
        let diss = DissipatorSet::new(&p, &eig);
        let h = CMat::zeros((DIM, DIM));
        // Diagonal in the *product* basis is a fixed point of pure dephasing;
        // an ms = 1 eigenstate is such a state.
        let rho = DensityMatrix::pure_state(5);
        let d = lindblad_rhs(rho.matrix(), &h, &diss);
        for z in d.iter() {
            assert!(z.norm() < 1e-14);
        }
        // The singlet is a zero-eigenvalue dark state but not a dephasing
        // fixed point; its derivative is still traceless.
        let rho2 = DensityMatrix::pure_state(1);
        let d2 = lindblad_rhs(rho2.matrix(), &h, &diss);
        assert!(linalg::trace(&d2).norm() < 1e-14);
    }

    #[test]
    fn rhs_is_traceless_on_random_states() {
        let p = params();
        let eig = diagonalize(&p).unwrap();
        let diss = DissipatorSet::new(&p, &eig);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let raw = CMat::from_shape_fn((DIM, DIM), |_| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let rho = linalg::hermitize(&raw);
            let hraw = CMat::from_shape_fn((DIM, DIM), |_| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let h = linalg::hermitize(&hraw);
            let d = lindblad_rhs(&rho, &h, &diss);
            assert!(linalg::trace(&d).norm() < 1e-12);
        }
    }

    #[test]
    fn fidelity_identity_orthogonality_and_mixture() {
        assert_abs_diff_eq!(fidelity(&DensityMatrix::pure_state(1), 1), 1.0);
        assert_abs_diff_eq!(fidelity(&DensityMatrix::pure_state(0), 1), 0.0);
        assert_abs_diff_eq!(fidelity(&DensityMatrix::maximally_mixed(), 3), 1.0 / 8.0);
    }

    #[test]
    fn density_matrix_validation_rejects_bad_states() {
        let mut rho = CMat::zeros((DIM, DIM));
        rho[(0, 0)] = C64::new(0.7, 0.0); // trace != 1
        assert!(DensityMatrix::new(rho).is_err());
        let mut rho = CMat::zeros((DIM, DIM));
        rho[(0, 0)] = C64::new(1.0, 0.0);
        rho[(0, 1)] = C64::new(0.1, 0.0); // not Hermitian
        assert!(DensityMatrix::new(rho).is_err());
        let mut rho = CMat::zeros((DIM, DIM));
        rho[(0, 0)] = C64::new(1.5, 0.0);
        rho[(1, 1)] = C64::new(-0.5, 0.0); // negative eigenvalue
        assert!(DensityMatrix::new(rho).is_err());
    }

    #[test]
    fn stationary_eigenstate_stays_put_without_drive_or_rates() {
        let p = no_decoherence();
        let field = SampledField {
            t_total: 2.0,
            times: (0..=40).map(|i| i as f64 * 0.05).collect(),
            omega_p: vec![0.0; 41],
            omega_s: vec![0.0; 41],
        };
        let traj = propagate(
            &field,
            Disturbance::NONE,
            &p,
            &DensityMatrix::pure_state(0),
            &PropagateOptions::default(),
        )
        .unwrap();
        let end = traj.final_checkpoint();
        assert_abs_diff_eq!(end.populations[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(end.purity, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn engines_agree_on_a_random_field() {
        let p = params();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let shape = random_crab(&mut rng, 2.5);
        let field = sample(&shape, 3.0, 301);
        let dist = Disturbance { delta: 0.2, kappa: 0.1 };
        let init = DensityMatrix::pure_state(0);
        let fid = |integ: Integrator| {
            let opts = PropagateOptions { integrator: integ, ..Default::default() };
            propagate(&field, dist, &p, &init, &opts)
                .unwrap()
                .final_fidelity(1)
        };
        let f_ref = fid(Integrator::Expm { substeps: 1 });
        let f_rk4 = fid(Integrator::Rk4 { substeps: 20 });
        let f_split = fid(Integrator::Split { substeps: 1 });
        assert_abs_diff_eq!(f_ref, f_rk4, epsilon = 1e-6);
        assert_abs_diff_eq!(f_ref, f_split, epsilon = 2e-4);
    }

    #[test]
    fn expm_step_halving_is_inert() {
        let p = params();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let shape = random_crab(&mut rng, 2.0);
        let field = sample(&shape, 2.0, 201);
        let init = DensityMatrix::pure_state(0);
        let f1 = propagate(
            &field,
            Disturbance::NONE,
            &p,
            &init,
            &PropagateOptions {
                integrator: Integrator::Expm { substeps: 1 },
                ..Default::default()
            },
        )
        .unwrap()
        .final_fidelity(1);
        let f2 = propagate(
            &field,
            Disturbance::NONE,
            &p,
            &init,
            &PropagateOptions {
                integrator: Integrator::Expm { substeps: 2 },
                ..Default::default()
            },
        )
        .unwrap()
        .final_fidelity(1);
        assert!((f1 - f2).abs() < 1e-12);
    }

    #[test]
    fn trace_and_population_sums_hold_along_the_way() {
        let p = params();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let shape = random_crab(&mut rng, 3.0);
        let field = sample(&shape, 4.0, 401);
        let traj = propagate(
            &field,
            Disturbance::NONE,
            &p,
            &DensityMatrix::pure_state(0),
            &PropagateOptions { checkpoint_stride: 5, ..Default::default() },
        )
        .unwrap();
        assert!(traj.max_trace_drift < 1e-9);
        for cp in &traj.checkpoints {
            let sum: f64 = cp.populations.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn closed_system_purity_is_conserved() {
        let p = no_decoherence();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let shape = random_crab(&mut rng, 2.5);
        let field = sample(&shape, 3.0, 301);
        let traj = propagate(
            &field,
            Disturbance::NONE,
            &p,
            &DensityMatrix::pure_state(0),
            &PropagateOptions::default(),
        )
        .unwrap();
        for cp in &traj.checkpoints {
            assert_abs_diff_eq!(cp.purity, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn dephasing_contracts_purity_without_drive() {
        // H = 0 and nonnegative rates: purity must be non-increasing.
        let p = params();
        let field = SampledField {
            t_total: 10.0,
            times: (0..=100).map(|i| i as f64 * 0.1).collect(),
            omega_p: vec![0.0; 101],
            omega_s: vec![0.0; 101],
        };
        // superposition in the eigenbasis picks up all dephasing channels
        let mut rho = CMat::zeros((DIM, DIM));
        for i in [0usize, 1, 4] {
            for j in [0usize, 1, 4] {
                rho[(i, j)] = C64::new(1.0 / 3.0, 0.0);
            }
        }
        let init = DensityMatrix::new(rho).unwrap();
        let traj = propagate(
            &field,
            Disturbance::NONE,
            &p,
            &init,
            &PropagateOptions { checkpoint_stride: 1, ..Default::default() },
        )
        .unwrap();
        let mut last = f64::INFINITY;
        for cp in &traj.checkpoints {
            assert!(cp.purity <= last + 1e-12);
            last = cp.purity;
        }
        // cross-check the final purity against a fine-step reference
        let reference = propagate(
            &field,
            Disturbance::NONE,
            &p,
            &init,
            &PropagateOptions {
                integrator: Integrator::Rk4 { substeps: 200 },
                ..Default::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(
            traj.final_checkpoint().purity,
            reference.final_checkpoint().purity,
            epsilon = 1e-8
        );
    }

    #[test]
    fn coarse_rk4_reports_instability() {
        let p = params();
        // two slices over 4 us is far beyond the RK4 stability limit
        let field = SampledField {
            t_total: 4.0,
            times: vec![0.0, 2.0, 4.0],
            omega_p: vec![1.0, 1.0, 1.0],
            omega_s: vec![1.0, 1.0, 1.0],
        };
        let r = propagate(
            &field,
            Disturbance::NONE,
            &p,
            &DensityMatrix::pure_state(0),
            &PropagateOptions {
                integrator: Integrator::Rk4 { substeps: 1 },
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(Error::StepUnstable { .. })));
    }

    #[test]
    fn nominal_disturbance_is_the_same_code_path() {
        let p = params();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let shape = random_crab(&mut rng, 2.0);
        let field = sample(&shape, 2.0, 201);
        let opts = PropagateOptions::default();
        let init = DensityMatrix::pure_state(0);
        let a = propagate(&field, Disturbance::NONE, &p, &init, &opts)
            .unwrap()
            .final_fidelity(1);
        let b = propagate(&field, Disturbance { delta: 0.0, kappa: 0.0 }, &p, &init, &opts)
            .unwrap()
            .final_fidelity(1);
        assert_eq!(a, b);
    }
}
