//! Thin safe wrappers over the handful of LAPACK/BLAS kernels the interior
//! point solver leans on. All matrices are column-major `DMatrix<f64>`,
//! which is LAPACK's native layout.

use nalgebra::DMatrix;

use openblas_src as _;

/// In-place lower Cholesky factorization. Returns false when the matrix is
/// not numerically positive definite; on success the lower triangle holds L.
pub fn cholesky_in_place(a: &mut DMatrix<f64>) -> bool {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    if n == 0 {
        return true;
    }
    let mut info = 0i32;
    unsafe {
        lapack::dpotrf(b'L', n as i32, a.as_mut_slice(), n as i32, &mut info);
    }
    info == 0
}

/// Solves `A x = b` for several right-hand sides given the Cholesky factor
/// produced by [`cholesky_in_place`]; `b` is overwritten with the solution.
pub fn cholesky_solve(factor: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = factor.nrows();
    let nrhs = b.ncols();
    if n == 0 || nrhs == 0 {
        return;
    }
    debug_assert_eq!(b.nrows(), n);
    let mut info = 0i32;
    unsafe {
        lapack::dpotrs(
            b'L',
            n as i32,
            nrhs as i32,
            factor.as_slice(),
            n as i32,
            b.as_mut_slice(),
            n as i32,
            &mut info,
        );
    }
    debug_assert_eq!(info, 0);
}

/// Symmetric rank-k update `c += v^T v` on the lower triangle, where `v` is
/// `k×n` and `c` is `n×n`. The strict upper triangle of `c` is not touched.
pub fn syrk_lower_add(c: &mut DMatrix<f64>, v: &DMatrix<f64>) {
    let n = c.nrows();
    let k = v.nrows();
    debug_assert_eq!(v.ncols(), n);
    debug_assert_eq!(c.ncols(), n);
    if n == 0 || k == 0 {
        return;
    }
    unsafe {
        blas::dsyrk(
            b'L',
            b'T',
            n as i32,
            k as i32,
            1.0,
            v.as_slice(),
            k as i32,
            1.0,
            c.as_mut_slice(),
            n as i32,
        );
    }
}

/// Dense product `out = a * b` through BLAS.
pub fn gemm(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    let (m, ka) = (a.nrows(), a.ncols());
    let (kb, n) = (b.nrows(), b.ncols());
    debug_assert_eq!(ka, kb);
    debug_assert_eq!(out.nrows(), m);
    debug_assert_eq!(out.ncols(), n);
    if m == 0 || n == 0 {
        return;
    }
    if ka == 0 {
        out.fill(0.0);
        return;
    }
    unsafe {
        blas::dgemm(
            b'N',
            b'N',
            m as i32,
            n as i32,
            ka as i32,
            1.0,
            a.as_slice(),
            m as i32,
            b.as_slice(),
            kb as i32,
            0.0,
            out.as_mut_slice(),
            m as i32,
        );
    }
}

fn gemm_general(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, ta: bool, tb: bool) {
    let (m, ka) = if ta { (a.ncols(), a.nrows()) } else { (a.nrows(), a.ncols()) };
    let (kb, n) = if tb { (b.ncols(), b.nrows()) } else { (b.nrows(), b.ncols()) };
    debug_assert_eq!(ka, kb);
    debug_assert_eq!(out.nrows(), m);
    debug_assert_eq!(out.ncols(), n);
    if m == 0 || n == 0 {
        return;
    }
    if ka == 0 {
        out.fill(0.0);
        return;
    }
    unsafe {
        blas::dgemm(
            if ta { b'T' } else { b'N' },
            if tb { b'T' } else { b'N' },
            m as i32,
            n as i32,
            ka as i32,
            1.0,
            a.as_slice(),
            a.nrows() as i32,
            b.as_slice(),
            b.nrows() as i32,
            0.0,
            out.as_mut_slice(),
            m as i32,
        );
    }
}

/// `out = a^T * b`.
pub fn gemm_tn(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    gemm_general(out, a, b, true, false);
}

/// `out = a * b^T`.
pub fn gemm_nt(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    gemm_general(out, a, b, false, true);
}

/// `out = a^T * b^T`.
pub fn gemm_tt(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    gemm_general(out, a, b, true, true);
}

/// Eigen-decomposition of a symmetric matrix: returns (eigenvalues
/// ascending, eigenvectors as columns). `a` is consumed as workspace.
#[allow(dead_code)]
pub fn symmetric_eigen(mut a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    if n == 0 {
        return (Vec::new(), a);
    }
    let mut w = vec![0.0f64; n];
    let lwork = (34 * n).max(1);
    let mut work = vec![0.0f64; lwork];
    let mut info = 0i32;
    unsafe {
        lapack::dsyev(
            b'V',
            b'L',
            n as i32,
            a.as_mut_slice(),
            n as i32,
            &mut w,
            &mut work,
            lwork as i32,
            &mut info,
        );
    }
    debug_assert_eq!(info, 0, "dsyev failed");
    (w, a)
}

/// Eigenvalues only of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    if n == 0 {
        return Vec::new();
    }
    let mut w = vec![0.0f64; n];
    let lwork = (34 * n).max(1);
    let mut work = vec![0.0f64; lwork];
    let mut info = 0i32;
    unsafe {
        lapack::dsyev(
            b'N',
            b'L',
            n as i32,
            a.as_mut_slice(),
            n as i32,
            &mut w,
            &mut work,
            lwork as i32,
            &mut info,
        );
    }
    debug_assert_eq!(info, 0, "dsyev failed");
    w
}

/// Thin singular value decomposition `a = U Σ V^T`; returns (u, sigma, vt).
pub fn svd(a: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let m = a.nrows();
    let n = a.ncols();
    let k = m.min(n);
    let mut u = DMatrix::zeros(m, k);
    let mut vt = DMatrix::zeros(k, n);
    let mut s = vec![0.0f64; k];
    let mut a = a;
    let lwork = (5 * (m + n)).max(1);
    let mut work = vec![0.0f64; lwork];
    let mut info = 0i32;
    unsafe {
        lapack::dgesvd(
            b'S',
            b'S',
            m as i32,
            n as i32,
            a.as_mut_slice(),
            m as i32,
            &mut s,
            u.as_mut_slice(),
            m as i32,
            vt.as_mut_slice(),
            k.max(1) as i32,
            &mut work,
            lwork as i32,
            &mut info,
        );
    }
    debug_assert_eq!(info, 0, "dgesvd failed");
    (u, s, vt)
}
