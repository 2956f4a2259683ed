//! Dense complex linear algebra kernels used by the propagators.
//!
//! Everything here is sized for the 4/8/64-dimensional matrices of this
//! crate, so the implementations favor robustness and determinism over
//! asymptotic cleverness: cyclic Jacobi for Hermitian eigenproblems,
//! scaling-and-squaring Pade for matrix exponentials, and a scaled Taylor
//! series for exponential actions on vectors.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    let (n, m) = a.dim();
    CMat::from_shape_fn((m, n), |(i, j)| a[(j, i)].conj())
}

/// (A + A†)/2.
pub fn hermitize(a: &CMat) -> CMat {
    let at = dagger(a);
    (a + &at).mapv(|z| z * 0.5)
}

/// max |A_ij - conj(A_ji)|.
pub fn hermiticity_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Maximum absolute column sum.
pub fn norm_1(a: &CMat) -> f64 {
    let (n, m) = a.dim();
    let mut best = 0.0f64;
    for j in 0..m {
        let mut s = 0.0;
        for i in 0..n {
            s += a[(i, j)].norm();
        }
        best = best.max(s);
    }
    best
}

pub fn trace(a: &CMat) -> C64 {
    (0..a.nrows()).map(|i| a[(i, i)]).sum()
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns. The input is only read through its Hermitian
/// part.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigh: square matrix required");
    let mut m = hermitize(a);
    let mut q = CMat::eye(n);

    let off = |m: &CMat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };
    let scale = norm_1(&m).max(1e-300);

    for _sweep in 0..64 {
        if off(&m) <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for qq in (p + 1)..n {
                let apq = m[(p, qq)];
                if apq.norm() <= 1e-18 * scale {
                    continue;
                }
                // Unitary rotation zeroing the (p,q) element.
                let phase = apq / apq.norm();
                let app = m[(p, p)].re;
                let aqq = m[(qq, qq)].re;
                let tau = (aqq - app) / (2.0 * apq.norm());
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = phase * (t * c);

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, qq)];
                    m[(k, p)] = mkp * c - mkq * s.conj();
                    m[(k, qq)] = mkp * s + mkq * c;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(qq, k)];
                    m[(p, k)] = mpk * c - mqk * s;
                    m[(qq, k)] = mpk * s.conj() + mqk * c;
                }
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkq = q[(k, qq)];
                    q[(k, p)] = qkp * c - qkq * s.conj();
                    q[(k, qq)] = qkp * s + qkq * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].re.partial_cmp(&m[(j, j)].re).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| m[(i, i)].re).collect();
    let mut vecs = CMat::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        for k in 0..n {
            vecs[(k, col)] = q[(k, i)];
        }
    }
    (vals, vecs)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(a: &CMat) -> f64 {
    eigh(a).0[0]
}

/// Solve A X = B by LU with partial pivoting; A is consumed as workspace.
pub fn lu_solve(mut a: CMat, mut b: CMat) -> Option<CMat> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.nrows());
    let m = b.ncols();
    for k in 0..n {
        let mut piv = k;
        let mut best = a[(k, k)].norm();
        for i in (k + 1)..n {
            let v = a[(i, k)].norm();
            if v > best {
                best = v;
                piv = i;
            }
        }
        if best == 0.0 {
            return None;
        }
        if piv != k {
            for j in 0..n {
                let t = a[(k, j)];
                a[(k, j)] = a[(piv, j)];
                a[(piv, j)] = t;
            }
            for j in 0..m {
                let t = b[(k, j)];
                b[(k, j)] = b[(piv, j)];
                b[(piv, j)] = t;
            }
        }
        let akk = a[(k, k)];
        for i in (k + 1)..n {
            let f = a[(i, k)] / akk;
            if f == ZERO {
                continue;
            }
            for j in (k + 1)..n {
                let v = a[(k, j)];
                a[(i, j)] -= f * v;
            }
            for j in 0..m {
                let v = b[(k, j)];
                b[(i, j)] -= f * v;
            }
            a[(i, k)] = f;
        }
    }
    // back substitution
    for k in (0..n).rev() {
        let akk = a[(k, k)];
        for j in 0..m {
            let mut s = b[(k, j)];
            for i in (k + 1)..n {
                s -= a[(k, i)] * b[(i, j)];
            }
            b[(k, j)] = s / akk;
        }
    }
    Some(b)
}

/// Matrix exponential by Pade order 13 with scaling and squaring.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    const THETA_13: f64 = 5.371_920_351_148_152;
    let nrm = norm_1(a);
    let s = if nrm > THETA_13 {
        (nrm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a_scaled = a.mapv(|z| z / 2f64.powi(s));

    const B: [f64; 14] = [
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
    let a2 = a_scaled.dot(&a_scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let eye = CMat::eye(n);

    let u_inner = &a6.mapv(|z| z * B[13])
        + &a4.mapv(|z| z * B[11])
        + &a2.mapv(|z| z * B[9]);
    let u_poly = a6.dot(&u_inner)
        + &a6.mapv(|z| z * B[7])
        + &a4.mapv(|z| z * B[5])
        + &a2.mapv(|z| z * B[3])
        + &eye.mapv(|z| z * B[1]);
    let u = a_scaled.dot(&u_poly);

    let v_inner = &a6.mapv(|z| z * B[12])
        + &a4.mapv(|z| z * B[10])
        + &a2.mapv(|z| z * B[8]);
    let v = a6.dot(&v_inner)
        + &a6.mapv(|z| z * B[6])
        + &a4.mapv(|z| z * B[4])
        + &a2.mapv(|z| z * B[2])
        + &eye.mapv(|z| z * B[0]);

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut r = lu_solve(lhs, rhs).expect("expm: Pade denominator is singular");
    for _ in 0..s {
        r = r.dot(&r);
    }
    r
}

/// y = exp(A) v through a scaled Taylor series; exact to machine precision
/// for the generator norms used here.
pub fn expm_apply(a: &CMat, v: &CVec) -> CVec {
    let nrm = norm_1(a);
    let s = (nrm / 4.0).ceil().max(1.0) as usize;
    let inv = 1.0 / s as f64;
    let mut y = v.clone();
    for _ in 0..s {
        let mut term = y.clone();
        let mut acc = y.clone();
        for k in 1..40 {
            term = a.dot(&term).mapv(|z| z * (inv / k as f64));
            acc += &term;
            let tn = term.iter().map(|z| z.norm_sqr()).sum::<f64>();
            if tn < 1e-34 * acc.iter().map(|z| z.norm_sqr()).sum::<f64>() {
                break;
            }
        }
        y = acc;
    }
    y
}

/// Cholesky factor (lower) of a symmetric positive definite real matrix.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Solve L L^T x = b given the Cholesky factor L.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}
