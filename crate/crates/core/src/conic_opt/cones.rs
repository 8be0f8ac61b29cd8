//! Cone kernels for the interior point solver: symmetric vectorization,
//! Nesterov-Todd scalings, Jordan algebra products, and step-length rules
//! for the three supported cone types.

use nalgebra::DMatrix;
use std::f64::consts::SQRT_2;

use super::dense;

/// One cone factor of the product cone the slack vector lives in.
///
/// `Psd(d)` is the cone of real symmetric positive semidefinite matrices of
/// order `d`, represented by the scaled lower-triangle vectorization
/// ([`svec_len`] coordinates, column-major, off-diagonals times sqrt(2)).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// Componentwise nonnegative orthant of the given length.
    Nonneg(usize),
    /// Second-order cone `{(t, x) : t >= ||x||}` of the given total length.
    Soc(usize),
    /// Real symmetric PSD cone of the given matrix order.
    Psd(usize),
}

impl Cone {
    /// Length of the slack segment this cone occupies.
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Nonneg(n) => n,
            Cone::Soc(n) => n,
            Cone::Psd(d) => svec_len(d),
        }
    }

    /// Barrier degree: the cone's contribution to the complementarity
    /// normalization.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Nonneg(n) => n,
            Cone::Soc(_) => 1,
            Cone::Psd(d) => d,
        }
    }

    pub fn is_empty(&self) -> bool {
        match *self {
            Cone::Nonneg(n) | Cone::Soc(n) => n == 0,
            Cone::Psd(d) => d == 0,
        }
    }
}

/// Number of svec coordinates of a symmetric matrix of order `d`.
pub fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Scaled vectorization of the lower triangle of a symmetric matrix,
/// column-major, off-diagonal entries multiplied by sqrt(2) so that
/// `svec(A) . svec(B) = trace(A B)`.
pub fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let d = m.nrows();
    debug_assert_eq!(out.len(), svec_len(d));
    let mut k = 0;
    for j in 0..d {
        out[k] = m[(j, j)];
        k += 1;
        for i in (j + 1)..d {
            out[k] = SQRT_2 * m[(i, j)];
            k += 1;
        }
    }
}

/// Inverse of [`svec_into`]: rebuilds the full symmetric matrix.
pub fn smat(v: &[f64], d: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(d));
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        m[(j, j)] = v[k];
        k += 1;
        for i in (j + 1)..d {
            let x = v[k] / SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// Writes the cone's identity element into `out`.
pub fn write_identity(cone: Cone, out: &mut [f64]) {
    out.fill(0.0);
    match cone {
        Cone::Nonneg(_) => out.fill(1.0),
        Cone::Soc(n) => {
            if n > 0 {
                out[0] = 1.0;
            }
        }
        Cone::Psd(d) => {
            let mut k = 0;
            for j in 0..d {
                out[k] = 1.0;
                k += d - j;
            }
        }
    }
}

/// Adds `scale` times the identity element to `out`.
pub fn add_identity(cone: Cone, out: &mut [f64], scale: f64) {
    match cone {
        Cone::Nonneg(_) => {
            for x in out.iter_mut() {
                *x += scale;
            }
        }
        Cone::Soc(n) => {
            if n > 0 {
                out[0] += scale;
            }
        }
        Cone::Psd(d) => {
            let mut k = 0;
            for j in 0..d {
                out[k] += scale;
                k += d - j;
            }
        }
    }
}

/// Which linear map derived from the Nesterov-Todd scaling to apply.
///
/// For the PSD cone the svec operator of `M -> R^T M R` is not symmetric,
/// so the transpose variants are distinct maps.
#[derive(Debug, Clone, Copy)]
pub enum ScaleOp {
    W,
    Wt,
    // The solver reconstructs ds through W^T and W^{-T} only; the plain
    // inverse stays so the four congruences form a closed, testable set.
    #[allow(dead_code)]
    WInv,
    WInvT,
    WtW,
    WtWInv,
}

/// Nesterov-Todd scaling data for one cone block, defining the symmetric
/// primal-dual scaling `lambda = W^{-T} s = W z`.
#[derive(Debug, Clone)]
pub enum Scaling {
    Nonneg {
        /// w_i = sqrt(s_i / z_i)
        w: Vec<f64>,
    },
    Soc {
        /// Unit hyperbolic Householder vector (v^T J v = 1); the scaling is
        /// W = beta (2 v v^T - J). `v` is the Jordan square root of the NT
        /// scaling point.
        v: Vec<f64>,
        beta: f64,
    },
    Psd {
        d: usize,
        /// Scaling factor: W svec(M) = svec(R^T M R).
        r: DMatrix<f64>,
        rinv: DMatrix<f64>,
    },
}

/// Computes the NT scaling and the scaled point `lambda` for one block.
/// Returns `None` when either iterate has left the cone interior beyond
/// numerical repair.
pub fn compute_scaling(cone: Cone, s: &[f64], z: &[f64]) -> Option<(Scaling, Vec<f64>)> {
    match cone {
        Cone::Nonneg(n) => {
            let mut w = vec![0.0; n];
            let mut lambda = vec![0.0; n];
            for i in 0..n {
                if s[i] <= 0.0 || z[i] <= 0.0 {
                    return None;
                }
                w[i] = (s[i] / z[i]).sqrt();
                lambda[i] = (s[i] * z[i]).sqrt();
            }
            Some((Scaling::Nonneg { w }, lambda))
        }
        Cone::Soc(n) => {
            let es = jordan_det(s);
            let ez = jordan_det(z);
            if es <= 0.0 || ez <= 0.0 || s[0] <= 0.0 || z[0] <= 0.0 {
                return None;
            }
            let (rs, rz) = (es.sqrt(), ez.sqrt());
            // NT scaling point of the two normalized iterates.
            let mut wbar = vec![0.0; n];
            let dot: f64 = (0..n).map(|i| s[i] * z[i]).sum::<f64>() / (rs * rz);
            let gamma = ((1.0 + dot) / 2.0).sqrt();
            wbar[0] = (s[0] / rs + z[0] / rz) / (2.0 * gamma);
            for i in 1..n {
                wbar[i] = (s[i] / rs - z[i] / rz) / (2.0 * gamma);
            }
            // Householder vector: Jordan square root of the scaling point.
            let mut v = wbar;
            v[0] += 1.0;
            let scale = (2.0 * v[0]).sqrt();
            for x in v.iter_mut() {
                *x /= scale;
            }
            let beta = (es / ez).powf(0.25);
            let scaling = Scaling::Soc { v, beta };
            let mut lambda = vec![0.0; n];
            scaling.apply(ScaleOp::W, z, &mut lambda);
            Some((scaling, lambda))
        }
        Cone::Psd(d) => {
            let mut ls = smat(s, d);
            let mut lz = smat(z, d);
            if !dense::cholesky_in_place(&mut ls) || !dense::cholesky_in_place(&mut lz) {
                return None;
            }
            zero_upper(&mut ls);
            zero_upper(&mut lz);
            // R = L_s V Sigma^{-1/2}, R^{-1} = Sigma^{-1/2} U^T L_z^T from
            // the SVD of L_z^T L_s; the scaled point is Sigma itself.
            let mut ltl = DMatrix::zeros(d, d);
            dense::gemm_tn(&mut ltl, &lz, &ls);
            let (u, sig, vt) = dense::svd(ltl);
            if sig.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return None;
            }
            let inv_sqrt: Vec<f64> = sig.iter().map(|&x| 1.0 / x.sqrt()).collect();
            let mut lsv = DMatrix::zeros(d, d);
            dense::gemm_nt(&mut lsv, &ls, &vt);
            let mut r = lsv;
            for j in 0..d {
                r.column_mut(j).scale_mut(inv_sqrt[j]);
            }
            let mut rinv = DMatrix::zeros(d, d);
            dense::gemm_tt(&mut rinv, &u, &lz);
            for i in 0..d {
                rinv.row_mut(i).scale_mut(inv_sqrt[i]);
            }
            let mut lambda = vec![0.0; svec_len(d)];
            let mut k = 0;
            for j in 0..d {
                lambda[k] = sig[j];
                k += d - j;
            }
            Some((Scaling::Psd { d, r, rinv }, lambda))
        }
    }
}

fn zero_upper(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for j in 1..d {
        for i in 0..j {
            m[(i, j)] = 0.0;
        }
    }
}

/// `s0^2 - ||s1||^2`, the second-order cone's Jordan determinant.
fn jordan_det(s: &[f64]) -> f64 {
    let tail: f64 = s[1..].iter().map(|x| x * x).sum();
    s[0] * s[0] - tail
}

impl Scaling {
    /// Applies the selected scaling map to `u`, writing the result to `out`.
    pub fn apply(&self, op: ScaleOp, u: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Nonneg { w } => {
                for i in 0..w.len() {
                    let f = match op {
                        ScaleOp::W | ScaleOp::Wt => w[i],
                        ScaleOp::WInv | ScaleOp::WInvT => 1.0 / w[i],
                        ScaleOp::WtW => w[i] * w[i],
                        ScaleOp::WtWInv => 1.0 / (w[i] * w[i]),
                    };
                    out[i] = f * u[i];
                }
            }
            Scaling::Soc { v, beta } => match op {
                ScaleOp::W | ScaleOp::Wt => soc_householder(v, *beta, false, u, out),
                ScaleOp::WInv | ScaleOp::WInvT => soc_householder(v, *beta, true, u, out),
                ScaleOp::WtW => {
                    let mut tmp = vec![0.0; u.len()];
                    soc_householder(v, *beta, false, u, &mut tmp);
                    soc_householder(v, *beta, false, &tmp, out);
                }
                ScaleOp::WtWInv => {
                    let mut tmp = vec![0.0; u.len()];
                    soc_householder(v, *beta, true, u, &mut tmp);
                    soc_householder(v, *beta, true, &tmp, out);
                }
            },
            Scaling::Psd { d, r, rinv } => {
                let m = smat(u, *d);
                let res = match op {
                    // W: R^T M R; Wt: R M R^T; WInv: R^{-T} M R^{-1};
                    // WInvT: R^{-1} M R^{-T}.
                    ScaleOp::W => congruence_tn(r, &m),
                    ScaleOp::Wt => congruence_nt(r, &m),
                    ScaleOp::WInv => congruence_tn(rinv, &m),
                    ScaleOp::WInvT => congruence_nt(rinv, &m),
                    ScaleOp::WtW => {
                        let mut w = DMatrix::zeros(*d, *d);
                        dense::gemm_nt(&mut w, r, r);
                        // w = R R^T; result = w M w
                        symmetric_sandwich(&w, &m)
                    }
                    ScaleOp::WtWInv => {
                        let mut w = DMatrix::zeros(*d, *d);
                        dense::gemm_tn(&mut w, rinv, rinv);
                        // winv = R^{-T} R^{-1}; result = winv M winv
                        symmetric_sandwich(&w, &m)
                    }
                };
                svec_into(&res, out);
            }
        }
    }
}

/// `A^T M A` for symmetric `M`.
fn congruence_tn(a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let mut tmp = DMatrix::zeros(d, d);
    dense::gemm(&mut tmp, m, a);
    let mut out = DMatrix::zeros(d, d);
    dense::gemm_tn(&mut out, a, &tmp);
    symmetrize(out)
}

/// `A M A^T` for symmetric `M`.
fn congruence_nt(a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let mut tmp = DMatrix::zeros(d, d);
    dense::gemm_nt(&mut tmp, m, a);
    let mut out = DMatrix::zeros(d, d);
    dense::gemm(&mut out, a, &tmp);
    symmetrize(out)
}

/// `S M S` for symmetric `S`, `M`.
fn symmetric_sandwich(s_mat: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s_mat.nrows();
    let mut tmp = DMatrix::zeros(d, d);
    dense::gemm(&mut tmp, m, s_mat);
    let mut out = DMatrix::zeros(d, d);
    dense::gemm(&mut out, s_mat, &tmp);
    symmetrize(out)
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Applies `beta (2 v v^T - J)` or its inverse `(1/beta)(2 J v v^T J - J)`.
fn soc_householder(v: &[f64], beta: f64, inverse: bool, u: &[f64], out: &mut [f64]) {
    let n = u.len();
    if inverse {
        // (1/beta) (2 Jv (v^T J u) - J u)
        let mut dot = v[0] * u[0];
        for i in 1..n {
            dot -= v[i] * u[i];
        }
        out[0] = (2.0 * v[0] * dot - u[0]) / beta;
        for i in 1..n {
            out[i] = (-2.0 * v[i] * dot + u[i]) / beta;
        }
    } else {
        let dot: f64 = (0..n).map(|i| v[i] * u[i]).sum();
        out[0] = beta * (2.0 * v[0] * dot - u[0]);
        for i in 1..n {
            out[i] = beta * (2.0 * v[i] * dot + u[i]);
        }
    }
}

/// Jordan product `a o b` of two cone vectors.
pub fn jordan_product(cone: Cone, a: &[f64], b: &[f64], out: &mut [f64]) {
    match cone {
        Cone::Nonneg(n) => {
            for i in 0..n {
                out[i] = a[i] * b[i];
            }
        }
        Cone::Soc(n) => {
            let dot: f64 = (0..n).map(|i| a[i] * b[i]).sum();
            let (a0, b0) = (a[0], b[0]);
            out[0] = dot;
            for i in 1..n {
                out[i] = a0 * b[i] + b0 * a[i];
            }
        }
        Cone::Psd(d) => {
            let am = smat(a, d);
            let bm = smat(b, d);
            let mut ab = DMatrix::zeros(d, d);
            dense::gemm(&mut ab, &am, &bm);
            // (AB + BA)/2 = (AB + (AB)^T)/2 for symmetric A, B
            let sym = symmetrize(ab);
            svec_into(&sym, out);
        }
    }
}

/// Solves `lambda o u = rhs` for `u`, exploiting that `lambda` is the scaled
/// point (diagonal in the PSD case). Returns false when the Jordan inverse
/// does not exist numerically.
pub fn jordan_solve(cone: Cone, lambda: &[f64], rhs: &[f64], out: &mut [f64]) -> bool {
    match cone {
        Cone::Nonneg(n) => {
            for i in 0..n {
                if lambda[i] == 0.0 {
                    return false;
                }
                out[i] = rhs[i] / lambda[i];
            }
            true
        }
        Cone::Soc(n) => {
            let det = jordan_det(lambda);
            if det <= 0.0 || lambda[0] <= 0.0 {
                return false;
            }
            let mut lx_dot = 0.0;
            for i in 1..n {
                lx_dot += lambda[i] * rhs[i];
            }
            let u0 = (lambda[0] * rhs[0] - lx_dot) / det;
            out[0] = u0;
            for i in 1..n {
                out[i] = (rhs[i] - u0 * lambda[i]) / lambda[0];
            }
            true
        }
        Cone::Psd(d) => {
            // lambda is diagonal: entry (i,j) of the product is
            // u_ij (sigma_i + sigma_j) / 2.
            let sig = psd_diagonal(lambda, d);
            if sig.iter().any(|&x| x <= 0.0) {
                return false;
            }
            let rm = smat(rhs, d);
            let mut um = DMatrix::zeros(d, d);
            for j in 0..d {
                for i in 0..d {
                    um[(i, j)] = 2.0 * rm[(i, j)] / (sig[i] + sig[j]);
                }
            }
            svec_into(&um, out);
            true
        }
    }
}

fn psd_diagonal(lambda: &[f64], d: usize) -> Vec<f64> {
    let mut sig = vec![0.0; d];
    let mut k = 0;
    for j in 0..d {
        sig[j] = lambda[k];
        k += d - j;
    }
    sig
}

/// Largest step `alpha` keeping `point + alpha * dir` inside the (closed)
/// cone, assuming `point` is interior. Returns `f64::INFINITY` when the ray
/// never leaves.
pub fn max_step(cone: Cone, point: &[f64], dir: &[f64]) -> f64 {
    match cone {
        Cone::Nonneg(n) => {
            let mut alpha = f64::INFINITY;
            for i in 0..n {
                if dir[i] < 0.0 {
                    alpha = alpha.min(-point[i] / dir[i]);
                }
            }
            alpha
        }
        Cone::Soc(_) => {
            let c = jordan_det(point);
            let a = jordan_det(dir);
            let mut b = 2.0 * point[0] * dir[0];
            for i in 1..point.len() {
                b -= 2.0 * point[i] * dir[i];
            }
            let mut alpha = quad_first_positive_root(a, b, c);
            if dir[0] < 0.0 {
                alpha = alpha.min(-point[0] / dir[0]);
            }
            alpha
        }
        Cone::Psd(d) => {
            // Generalized eigen bound: P + alpha D >= 0 iff
            // I + alpha L^{-1} D L^{-T} >= 0 with P = L L^T.
            let p = smat(point, d);
            let chol = match nalgebra::Cholesky::new(p) {
                Some(c) => c,
                None => return 0.0,
            };
            let l = chol.l();
            let dm = smat(dir, d);
            let y = match l.solve_lower_triangular(&dm) {
                Some(y) => y,
                None => return 0.0,
            };
            let scaled = match l.solve_lower_triangular(&y.transpose()) {
                Some(m) => m,
                None => return 0.0,
            };
            let eigs = dense::symmetric_eigenvalues(scaled);
            let min_eig = eigs.first().copied().unwrap_or(0.0);
            if min_eig >= 0.0 {
                f64::INFINITY
            } else {
                1.0 / (-min_eig)
            }
        }
    }
}

/// Smallest positive root of `a x^2 + b x + c = 0` with `c > 0`; infinity
/// when the quadratic stays positive on the ray.
fn quad_first_positive_root(a: f64, b: f64, c: f64) -> f64 {
    let tiny = 1e-300;
    if a.abs() < tiny {
        if b < 0.0 {
            return -c / b;
        }
        return f64::INFINITY;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return if a > 0.0 { f64::INFINITY } else { 0.0 };
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let (mut r1, mut r2) = (q / a, if q.abs() < tiny { f64::INFINITY } else { c / q });
    if r1 > r2 {
        std::mem::swap(&mut r1, &mut r2);
    }
    if r1 > 0.0 {
        r1
    } else if r2 > 0.0 {
        r2
    } else {
        f64::INFINITY
    }
}

/// Euclidean-style distance of `s` from the cone (0 when inside), used for
/// reporting achieved feasibility.
pub fn cone_violation(cone: Cone, s: &[f64]) -> f64 {
    match cone {
        Cone::Nonneg(_) => s.iter().fold(0.0f64, |m, &x| m.max(-x)),
        Cone::Soc(n) => {
            if n == 0 {
                return 0.0;
            }
            let tail: f64 = s[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
            (tail - s[0]).max(0.0)
        }
        Cone::Psd(d) => {
            let m = smat(s, d);
            let eigs = dense::symmetric_eigenvalues(m);
            (-eigs.first().copied().unwrap_or(0.0)).max(0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_interior(cone: Cone, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match cone {
            Cone::Nonneg(n) => (0..n).map(|_| rng.random_range(0.1..3.0)).collect(),
            Cone::Soc(n) => {
                let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let tail: f64 = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                v[0] = tail + rng.random_range(0.1..2.0);
                v
            }
            Cone::Psd(d) => {
                let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                let m = &a * a.transpose() + DMatrix::identity(d, d) * 0.3;
                let mut out = vec![0.0; svec_len(d)];
                svec_into(&m, &mut out);
                out
            }
        }
    }

    fn test_cones() -> Vec<Cone> {
        vec![Cone::Nonneg(4), Cone::Soc(3), Cone::Soc(5), Cone::Psd(3), Cone::Psd(4)]
    }

    // 1. svec/smat round-trip and the trace inner product identity.
    #[test]
    fn svec_roundtrip_and_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let a = &a + a.transpose();
        let b = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = &b + b.transpose();
        let mut va = vec![0.0; svec_len(4)];
        let mut vb = vec![0.0; svec_len(4)];
        svec_into(&a, &mut va);
        svec_into(&b, &mut vb);
        assert!((smat(&va, 4) - &a).norm() < 1e-14);
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        assert!((dot - (&a * &b).trace()).abs() < 1e-12);
    }

    // 2. The NT scaling satisfies its defining property W z = W^{-T} s = lambda
    //    for every cone type, and lambda o lambda recovers s^T z in trace.
    #[test]
    fn nt_scaling_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for cone in test_cones() {
            for _ in 0..20 {
                let s = random_interior(cone, &mut rng);
                let z = random_interior(cone, &mut rng);
                let (scaling, lambda) = compute_scaling(cone, &s, &z).expect("interior");
                let dim = cone.dim();
                let mut wz = vec![0.0; dim];
                let mut winvt_s = vec![0.0; dim];
                scaling.apply(ScaleOp::W, &z, &mut wz);
                scaling.apply(ScaleOp::WInvT, &s, &mut winvt_s);
                for i in 0..dim {
                    assert!((wz[i] - lambda[i]).abs() < 1e-9, "{cone:?} Wz vs lambda");
                    assert!((winvt_s[i] - lambda[i]).abs() < 1e-9, "{cone:?} W^-T s");
                }
                let lam_sq: f64 = lambda.iter().map(|x| x * x).sum();
                let sz: f64 = s.iter().zip(&z).map(|(a, b)| a * b).sum();
                assert!((lam_sq - sz).abs() < 1e-9 * (1.0 + sz.abs()));
            }
        }
    }

    // 3. Scaling maps compose consistently: W^T W equals applying W then W^T,
    //    and WtWInv inverts WtW.
    #[test]
    fn scaling_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for cone in test_cones() {
            let s = random_interior(cone, &mut rng);
            let z = random_interior(cone, &mut rng);
            let (scaling, _) = compute_scaling(cone, &s, &z).unwrap();
            let dim = cone.dim();
            let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut wu = vec![0.0; dim];
            let mut wtwu = vec![0.0; dim];
            let mut direct = vec![0.0; dim];
            scaling.apply(ScaleOp::W, &u, &mut wu);
            scaling.apply(ScaleOp::Wt, &wu, &mut wtwu);
            scaling.apply(ScaleOp::WtW, &u, &mut direct);
            for i in 0..dim {
                assert!((wtwu[i] - direct[i]).abs() < 1e-9);
            }
            let mut back = vec![0.0; dim];
            scaling.apply(ScaleOp::WtWInv, &direct, &mut back);
            for i in 0..dim {
                assert!((back[i] - u[i]).abs() < 1e-8);
            }
        }
    }

    // 4. Jordan solve inverts the Jordan product against the scaled point.
    #[test]
    fn jordan_solve_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for cone in test_cones() {
            let s = random_interior(cone, &mut rng);
            let z = random_interior(cone, &mut rng);
            let (_, lambda) = compute_scaling(cone, &s, &z).unwrap();
            let dim = cone.dim();
            let rhs: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut u = vec![0.0; dim];
            assert!(jordan_solve(cone, &lambda, &rhs, &mut u));
            let mut recovered = vec![0.0; dim];
            jordan_product(cone, &lambda, &u, &mut recovered);
            for i in 0..dim {
                assert!((recovered[i] - rhs[i]).abs() < 1e-9);
            }
        }
    }

    // 5. max_step lands exactly on the cone boundary: the violation at
    //    point + alpha*dir is ~0 and slightly beyond it is positive.
    #[test]
    fn max_step_hits_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for cone in test_cones() {
            for _ in 0..20 {
                let p = random_interior(cone, &mut rng);
                let dim = cone.dim();
                let d: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let alpha = max_step(cone, &p, &d);
                if !alpha.is_finite() {
                    // Ray stays inside: far point must still be in the cone.
                    let far: Vec<f64> = p.iter().zip(&d).map(|(a, b)| a + 1e6 * b).collect();
                    assert!(cone_violation(cone, &far) <= 1e-6);
                    continue;
                }
                let at: Vec<f64> = p.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                assert!(cone_violation(cone, &at) < 1e-7, "{cone:?} boundary");
                let beyond: Vec<f64> =
                    p.iter().zip(&d).map(|(a, b)| a + (alpha * 1.01 + 1e-9) * b).collect();
                assert!(cone_violation(cone, &beyond) > 0.0, "{cone:?} beyond boundary");
            }
        }
    }

    // 6. Identity element: e o u = u and violation of e is zero.
    #[test]
    fn identity_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for cone in test_cones() {
            let dim = cone.dim();
            let mut e = vec![0.0; dim];
            write_identity(cone, &mut e);
            assert!(cone_violation(cone, &e) == 0.0);
            let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; dim];
            jordan_product(cone, &e, &u, &mut out);
            for i in 0..dim {
                assert!((out[i] - u[i]).abs() < 1e-12);
            }
        }
    }
}
