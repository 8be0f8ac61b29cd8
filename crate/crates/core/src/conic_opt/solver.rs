//! Embedded primal-dual interior point method on the homogeneous self-dual
//! embedding, with Nesterov-Todd scaling and a Mehrotra predictor-corrector.
//!
//! The KKT system is reduced to a dense Schur complement in the primal
//! variables and factored with a Cholesky decomposition, which keeps the
//! per-iteration cost dominated by one `dpotrf` plus a handful of dense
//! products. Infeasibility and unboundedness are detected through the
//! embedding's certificates rather than by divergence heuristics.

use nalgebra::DMatrix;

use super::cones::{self, Cone, ScaleOp, Scaling};
use super::dense;
use super::{ConicProgram, ConicSolution, SolveStatus, SolverSettings};

struct Block {
    cone: Cone,
    offset: usize,
    /// (local row, variable, coefficient), the block's sparse matrix.
    triplets: Vec<(usize, usize, f64)>,
    /// Per touching variable, sorted by variable index: (var, [(local row, coeff)]).
    cols: Vec<(usize, Vec<(usize, f64)>)>,
}

struct Directions {
    dx: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

pub(super) fn solve_embedded(prog: &ConicProgram, settings: &SolverSettings) -> ConicSolution {
    let n = prog.num_vars;
    let c = prog.objective.clone();

    let mut blocks = Vec::new();
    let mut m = 0usize;
    let mut h = Vec::new();
    for cb in &prog.blocks {
        if cb.cone.is_empty() {
            continue;
        }
        let dim = cb.cone.dim();
        let mut triplets = Vec::with_capacity(cb.matrix.entries().len());
        let mut per_col: std::collections::BTreeMap<usize, Vec<(usize, f64)>> =
            std::collections::BTreeMap::new();
        for &(r, col, v) in cb.matrix.entries() {
            if v == 0.0 {
                continue;
            }
            triplets.push((r, col, v));
            per_col.entry(col).or_default().push((r, v));
        }
        blocks.push(Block {
            cone: cb.cone,
            offset: m,
            triplets,
            cols: per_col.into_iter().collect(),
        });
        h.extend_from_slice(&cb.rhs);
        m += dim;
    }

    if m == 0 {
        return solve_unconstrained(&c, n);
    }

    let nu: usize = blocks.iter().map(|b| b.cone.degree()).sum();
    let norm_c = norm2(&c).max(1.0);
    let norm_h = norm2(&h).max(1.0);

    let mut x = vec![0.0; n];
    let mut s = vec![0.0; m];
    let mut z = vec![0.0; m];
    for b in &blocks {
        cones::write_identity(b.cone, seg_mut(&mut s, b));
        cones::write_identity(b.cone, seg_mut(&mut z, b));
    }
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let mut best_metric = f64::INFINITY;
    let mut best_diag = String::new();
    let trace = std::env::var_os("ISAC_CONIC_TRACE").is_some();

    for iter in 0..=settings.max_iterations {
        // Residuals of the homogeneous embedding.
        let mut rx = vec![0.0; n];
        gt_mul(&blocks, &z, &mut rx);
        for j in 0..n {
            rx[j] += c[j] * tau;
        }
        let mut rz = vec![0.0; m];
        g_mul(&blocks, &x, &mut rz);
        for i in 0..m {
            rz[i] += s[i] - h[i] * tau;
        }
        let rtau = dot(&c, &x) + dot(&h, &z) + kappa;

        let pobj = dot(&c, &x) / tau;
        let gap = dot(&s, &z) / (tau * tau);
        let pres = norm2(&rz) / (tau * norm_h);
        let dres = norm2(&rx) / (tau * norm_c);
        let relgap = gap / pobj.abs().max(1.0);
        let metric = pres.max(dres).max(relgap);
        if metric < best_metric {
            best_metric = metric;
            best_diag = format!(
                "iter {iter}: pres={pres:.3e} dres={dres:.3e} relgap={relgap:.3e} tau={tau:.3e} kappa={kappa:.3e}"
            );
        }

        if pres <= settings.feas_tol && dres <= settings.feas_tol && relgap <= settings.gap_tol {
            let xs: Vec<f64> = x.iter().map(|v| v / tau).collect();
            return finish(prog, xs, SolveStatus::Optimal, pobj, gap, iter);
        }
        let hz = dot(&h, &z);
        let cx = dot(&c, &x);
        if hz < 0.0 {
            // rx - c*tau = G^T z
            let gtz: Vec<f64> = (0..n).map(|j| rx[j] - c[j] * tau).collect();
            if norm2(&gtz) / norm_c / (-hz) <= settings.feas_tol {
                let xs: Vec<f64> = x.iter().map(|v| v / tau).collect();
                return finish(prog, xs, SolveStatus::Infeasible, f64::NAN, gap, iter);
            }
        }
        if cx < 0.0 {
            // rz + h*tau = G x + s
            let gxs: Vec<f64> = (0..m).map(|i| rz[i] + h[i] * tau).collect();
            if norm2(&gxs) / norm_h / (-cx) <= settings.feas_tol {
                let xs: Vec<f64> = x.iter().map(|v| v / tau).collect();
                return finish(prog, xs, SolveStatus::Unbounded, f64::NEG_INFINITY, gap, iter);
            }
        }
        if iter == settings.max_iterations {
            return numerical_failure(n, iter, format!("iteration cap reached; best {best_diag}"));
        }

        // Nesterov-Todd scalings.
        let mut scalings = Vec::with_capacity(blocks.len());
        let mut lambda = vec![0.0; m];
        let mut scaling_ok = true;
        for b in &blocks {
            match cones::compute_scaling(b.cone, seg(&s, b), seg(&z, b)) {
                Some((sc, lam)) => {
                    seg_mut(&mut lambda, b).copy_from_slice(&lam);
                    scalings.push(sc);
                }
                None => {
                    scaling_ok = false;
                    break;
                }
            }
        }
        if !scaling_ok {
            return numerical_failure(
                n,
                iter,
                format!("iterate left the cone interior; best {best_diag}"),
            );
        }
        let mu = (dot(&s, &z) + tau * kappa) / (nu as f64 + 1.0);

        let kkt = match KktSystem::factor(n, m, &blocks, &scalings, &c, &h, tau, kappa) {
            Some(k) => k,
            None => {
                return numerical_failure(
                    n,
                    iter,
                    format!("KKT factorization failed; best {best_diag}"),
                )
            }
        };

        // Affine (predictor) direction: drive complementarity to zero.
        let mut dt = vec![0.0; m];
        for b in &blocks {
            let lam = seg(&lambda, b);
            let out = seg_mut(&mut dt, b);
            cones::jordan_product(b.cone, lam, lam, out);
        }
        for v in dt.iter_mut() {
            *v = -*v;
        }
        let aff = match kkt.step(&blocks, &scalings, &lambda, &rx, &rz, rtau, 1.0, &dt, -tau * kappa)
        {
            Some(d) => d,
            None => {
                return numerical_failure(n, iter, format!("singular step; best {best_diag}"))
            }
        };

        let mut dst = vec![0.0; m];
        let mut dzt = vec![0.0; m];
        for (b, sc) in blocks.iter().zip(&scalings) {
            sc.apply(ScaleOp::WInvT, seg(&aff.ds, b), seg_mut(&mut dst, b));
            sc.apply(ScaleOp::W, seg(&aff.dz, b), seg_mut(&mut dzt, b));
        }
        let alpha_aff = boundary_step(&blocks, &lambda, &dst, &dzt, tau, kappa, &aff);
        let sigma = (1.0 - alpha_aff.min(1.0)).max(0.0).powi(3);

        // Combined (corrector) direction.
        let mut dt_c = vec![0.0; m];
        for b in &blocks {
            let lam = seg(&lambda, b);
            let mut ll = vec![0.0; b.cone.dim()];
            cones::jordan_product(b.cone, lam, lam, &mut ll);
            let mut cross = vec![0.0; b.cone.dim()];
            cones::jordan_product(b.cone, seg(&dst, b), seg(&dzt, b), &mut cross);
            let out = seg_mut(&mut dt_c, b);
            for i in 0..out.len() {
                out[i] = -ll[i] - cross[i];
            }
            cones::add_identity(b.cone, out, sigma * mu);
        }
        let dtk_c = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
        let comb = match kkt.step(
            &blocks,
            &scalings,
            &lambda,
            &rx,
            &rz,
            rtau,
            1.0 - sigma,
            &dt_c,
            dtk_c,
        ) {
            Some(d) => d,
            None => {
                return numerical_failure(n, iter, format!("singular step; best {best_diag}"))
            }
        };
        for (b, sc) in blocks.iter().zip(&scalings) {
            sc.apply(ScaleOp::WInvT, seg(&comb.ds, b), seg_mut(&mut dst, b));
            sc.apply(ScaleOp::W, seg(&comb.dz, b), seg_mut(&mut dzt, b));
        }
        let alpha_max = boundary_step(&blocks, &lambda, &dst, &dzt, tau, kappa, &comb);
        let alpha = (0.99 * alpha_max).min(1.0);
        if trace {
            eprintln!(
                "it {iter:3} pres {pres:9.2e} dres {dres:9.2e} relgap {relgap:9.2e} mu {mu:9.2e} \
                 a_aff {alpha_aff:9.2e} sigma {sigma:9.2e} alpha {alpha:9.2e} tau {tau:9.2e}"
            );
        }
        if !alpha.is_finite() || alpha <= 1e-13 {
            return numerical_failure(
                n,
                iter,
                format!("step length collapsed (alpha={alpha:.3e}); best {best_diag}"),
            );
        }

        for j in 0..n {
            x[j] += alpha * comb.dx[j];
        }
        for i in 0..m {
            s[i] += alpha * comb.ds[i];
            z[i] += alpha * comb.dz[i];
        }
        tau += alpha * comb.dtau;
        kappa += alpha * comb.dkappa;
        if !(tau > 0.0) || !tau.is_finite() || !kappa.is_finite() {
            return numerical_failure(
                n,
                iter,
                format!("homogenizing variable degenerated (tau={tau:.3e}); best {best_diag}"),
            );
        }
    }
    unreachable!("loop returns at the iteration cap");
}

/// Schur-complement KKT solver for one scaling: factors
/// `H = G^T (W^T W)^{-1} G` and eliminates the homogenizing variable.
struct KktSystem {
    n: usize,
    m: usize,
    h_full: DMatrix<f64>,
    factor: DMatrix<f64>,
    c: Vec<f64>,
    h_rhs: Vec<f64>,
    vx: Vec<f64>,
    vz: Vec<f64>,
    den: f64,
    tau: f64,
    kappa: f64,
}

impl KktSystem {
    #[allow(clippy::too_many_arguments)]
    fn factor(
        n: usize,
        m: usize,
        blocks: &[Block],
        scalings: &[Scaling],
        c: &[f64],
        h: &[f64],
        tau: f64,
        kappa: f64,
    ) -> Option<Self> {
        let mut hmat = DMatrix::<f64>::zeros(n, n);
        let mut col_buf = vec![0.0; 0];
        let mut scaled_buf = vec![0.0; 0];
        for (b, sc) in blocks.iter().zip(scalings) {
            let dim = b.cone.dim();
            let t = b.cols.len();
            if t == 0 {
                continue;
            }
            col_buf.resize(dim, 0.0);
            scaled_buf.resize(dim, 0.0);
            // Columns of W^{-T} G_B stacked densely; H_B = U^T U.
            let mut u = DMatrix::<f64>::zeros(dim, t);
            for (ci, (_, entries)) in b.cols.iter().enumerate() {
                col_buf.fill(0.0);
                for &(r, v) in entries {
                    col_buf[r] = v;
                }
                sc.apply(ScaleOp::WInvT, &col_buf, &mut scaled_buf);
                u.column_mut(ci).copy_from_slice(&scaled_buf);
            }
            if t == n && b.cols.iter().enumerate().all(|(i, (v, _))| i == *v) {
                dense::syrk_lower_add(&mut hmat, &u);
            } else {
                let mut local = DMatrix::<f64>::zeros(t, t);
                dense::syrk_lower_add(&mut local, &u);
                for jj in 0..t {
                    let gj = b.cols[jj].0;
                    for ii in jj..t {
                        let gi = b.cols[ii].0;
                        // cols are sorted ascending, so (gi, gj) stays lower.
                        hmat[(gi, gj)] += local[(ii, jj)];
                    }
                }
            }
        }
        // Mirror the lower triangle; keep an unregularized copy for
        // iterative refinement.
        for j in 0..n {
            for i in (j + 1)..n {
                hmat[(j, i)] = hmat[(i, j)];
            }
        }
        let h_full = hmat.clone();
        let max_diag = (0..n).fold(0.0f64, |acc, j| acc.max(hmat[(j, j)].abs())).max(1.0);
        let mut reg = 1e-12 * max_diag;
        let factor = hmat;
        for _ in 0..4 {
            let mut attempt = factor.clone();
            for j in 0..n {
                attempt[(j, j)] += reg;
            }
            if dense::cholesky_in_place(&mut attempt) {
                let mut kkt = KktSystem {
                    n,
                    m,
                    h_full,
                    factor: attempt,
                    c: c.to_vec(),
                    h_rhs: h.to_vec(),
                    vx: Vec::new(),
                    vz: Vec::new(),
                    den: 0.0,
                    tau,
                    kappa,
                };
                let neg_c: Vec<f64> = c.iter().map(|v| -v).collect();
                let (vx, vz) = kkt.ksolve(blocks, scalings, &neg_c, h);
                let den = dot(c, &vx) + dot(h, &vz) - kappa / tau;
                if den.abs() < 1e-300 || !den.is_finite() {
                    return None;
                }
                kkt.vx = vx;
                kkt.vz = vz;
                kkt.den = den;
                return Some(kkt);
            }
            reg *= 100.0;
        }
        None
    }

    /// Solves the 2x2 scaled system
    /// `[0 G^T; G -W^T W] [dx; dz] = [bx; bz]`
    /// through the Schur complement, with iterative refinement on the full
    /// system. Refinement matters: reconstructing `dz` applies
    /// `(W^T W)^{-1}`, which near convergence amplifies Schur-solve error
    /// by orders of magnitude.
    fn ksolve(
        &self,
        blocks: &[Block],
        scalings: &[Scaling],
        bx: &[f64],
        bz: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let (mut dx, mut dz) = self.ksolve_raw(blocks, scalings, bx, bz);
        let mut r1 = vec![0.0; self.n];
        let mut r2 = vec![0.0; self.m];
        for _ in 0..2 {
            // r1 = bx - G^T dz ; r2 = bz - G dx + W^T W dz
            gt_mul(blocks, &dz, &mut r1);
            for j in 0..self.n {
                r1[j] = bx[j] - r1[j];
            }
            g_mul(blocks, &dx, &mut r2);
            let mut wtw_dz = vec![0.0; self.m];
            for (b, sc) in blocks.iter().zip(scalings) {
                sc.apply(ScaleOp::WtW, seg(&dz, b), seg_mut(&mut wtw_dz, b));
            }
            for i in 0..self.m {
                r2[i] = bz[i] - r2[i] + wtw_dz[i];
            }
            let (cx, cz) = self.ksolve_raw(blocks, scalings, &r1, &r2);
            for j in 0..self.n {
                dx[j] += cx[j];
            }
            for i in 0..self.m {
                dz[i] += cz[i];
            }
        }
        (dx, dz)
    }

    fn ksolve_raw(
        &self,
        blocks: &[Block],
        scalings: &[Scaling],
        bx: &[f64],
        bz: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let mut tmp = vec![0.0; self.m];
        for (b, sc) in blocks.iter().zip(scalings) {
            sc.apply(ScaleOp::WtWInv, seg(bz, b), seg_mut(&mut tmp, b));
        }
        let mut rhs = vec![0.0; self.n];
        gt_mul(blocks, &tmp, &mut rhs);
        for j in 0..self.n {
            rhs[j] += bx[j];
        }
        let mut dx_mat = DMatrix::from_column_slice(self.n, 1, &rhs);
        dense::cholesky_solve(&self.factor, &mut dx_mat);
        // One inner sweep against the unregularized matrix corrects the
        // static regularization bias of the factor.
        let resid = DMatrix::from_column_slice(self.n, 1, &rhs) - &self.h_full * &dx_mat;
        let mut corr = resid;
        dense::cholesky_solve(&self.factor, &mut corr);
        dx_mat += corr;
        let dx: Vec<f64> = dx_mat.as_slice().to_vec();

        let mut gdx = vec![0.0; self.m];
        g_mul(blocks, &dx, &mut gdx);
        for i in 0..self.m {
            gdx[i] -= bz[i];
        }
        let mut dz = vec![0.0; self.m];
        for (b, sc) in blocks.iter().zip(scalings) {
            sc.apply(ScaleOp::WtWInv, seg(&gdx, b), seg_mut(&mut dz, b));
        }
        (dx, dz)
    }

    /// One Newton-type direction for the given complementarity targets
    /// (`dt` in the scaled space, `dtk` for the tau-kappa pair); residual
    /// right-hand sides are scaled by `fres`.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        blocks: &[Block],
        scalings: &[Scaling],
        lambda: &[f64],
        rx: &[f64],
        rz: &[f64],
        rtau: f64,
        fres: f64,
        dt: &[f64],
        dtk: f64,
    ) -> Option<Directions> {
        let n = self.n;
        let m = self.m;
        // bz = -fres*rz - W^T (lambda \ dt)
        let mut lam_inv_dt = vec![0.0; m];
        for b in blocks {
            if !cones::jordan_solve(
                b.cone,
                seg(lambda, b),
                seg(dt, b),
                seg_mut(&mut lam_inv_dt, b),
            ) {
                return None;
            }
        }
        let mut wt_term = vec![0.0; m];
        for (b, sc) in blocks.iter().zip(scalings) {
            sc.apply(ScaleOp::Wt, seg(&lam_inv_dt, b), seg_mut(&mut wt_term, b));
        }
        let bx: Vec<f64> = (0..n).map(|j| -fres * rx[j]).collect();
        let bz: Vec<f64> = (0..m).map(|i| -fres * rz[i] - wt_term[i]).collect();
        let (ux, uz) = self.ksolve(blocks, scalings, &bx, &bz);

        let w_tau = -fres * rtau;
        let dtau = (w_tau - dtk / self.tau - dot(&self.c, &ux) - dot(&self.h_rhs, &uz)) / self.den;
        if !dtau.is_finite() {
            return None;
        }
        let dx: Vec<f64> = (0..n).map(|j| ux[j] + dtau * self.vx[j]).collect();
        let dz: Vec<f64> = (0..m).map(|i| uz[i] + dtau * self.vz[i]).collect();
        // ds = W^T (lambda \ dt) - W^T W dz
        let mut ds = vec![0.0; m];
        for (b, sc) in blocks.iter().zip(scalings) {
            sc.apply(ScaleOp::WtW, seg(&dz, b), seg_mut(&mut ds, b));
        }
        for i in 0..m {
            ds[i] = wt_term[i] - ds[i];
        }
        let dkappa = (dtk - self.kappa * dtau) / self.tau;
        Some(Directions { dx, dz, ds, dtau, dkappa })
    }
}

fn boundary_step(
    blocks: &[Block],
    lambda: &[f64],
    dst: &[f64],
    dzt: &[f64],
    tau: f64,
    kappa: f64,
    dirs: &Directions,
) -> f64 {
    let mut alpha = f64::INFINITY;
    for b in blocks {
        alpha = alpha.min(cones::max_step(b.cone, seg(lambda, b), seg(dst, b)));
        alpha = alpha.min(cones::max_step(b.cone, seg(lambda, b), seg(dzt, b)));
    }
    if dirs.dtau < 0.0 {
        alpha = alpha.min(-tau / dirs.dtau);
    }
    if dirs.dkappa < 0.0 {
        alpha = alpha.min(-kappa / dirs.dkappa);
    }
    alpha
}

fn solve_unconstrained(c: &[f64], n: usize) -> ConicSolution {
    if c.iter().all(|&v| v == 0.0) {
        ConicSolution {
            status: SolveStatus::Optimal,
            x: vec![0.0; n],
            objective: 0.0,
            feas_residual: 0.0,
            gap: 0.0,
            iterations: 0,
            diagnostics: String::new(),
        }
    } else {
        ConicSolution {
            status: SolveStatus::Unbounded,
            x: vec![0.0; n],
            objective: f64::NEG_INFINITY,
            feas_residual: 0.0,
            gap: 0.0,
            iterations: 0,
            diagnostics: "nonzero objective with no constraints".to_string(),
        }
    }
}

fn finish(
    prog: &ConicProgram,
    x: Vec<f64>,
    status: SolveStatus,
    objective: f64,
    gap: f64,
    iterations: usize,
) -> ConicSolution {
    let feas = if matches!(status, SolveStatus::Optimal) {
        super::feasibility_residual(prog, &x)
    } else {
        f64::NAN
    };
    ConicSolution {
        status,
        x,
        objective,
        feas_residual: feas,
        gap,
        iterations,
        diagnostics: String::new(),
    }
}

fn numerical_failure(n: usize, iterations: usize, diagnostics: String) -> ConicSolution {
    ConicSolution {
        status: SolveStatus::NumericalFailure,
        x: vec![0.0; n],
        objective: f64::NAN,
        feas_residual: f64::NAN,
        gap: f64::NAN,
        iterations,
        diagnostics,
    }
}

fn seg<'a>(v: &'a [f64], b: &Block) -> &'a [f64] {
    &v[b.offset..b.offset + b.cone.dim()]
}

fn seg_mut<'a>(v: &'a mut [f64], b: &Block) -> &'a mut [f64] {
    &mut v[b.offset..b.offset + b.cone.dim()]
}

fn g_mul(blocks: &[Block], x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for b in blocks {
        for &(r, col, v) in &b.triplets {
            out[b.offset + r] += v * x[col];
        }
    }
}

fn gt_mul(blocks: &[Block], y: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for b in blocks {
        for &(r, col, v) in &b.triplets {
            out[col] += v * y[b.offset + r];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
