//! Deterministic conic optimization over the nonnegative orthant,
//! second-order cones, and real symmetric PSD cones, plus the complex
//! Hermitian to real symmetric embedding that lets Hermitian matrix
//! inequalities ride on the real PSD cone.
//!
//! A program is `min c^T x` subject to per-block constraints
//! `rhs - A x (in) K`: each [`ConstraintBlock`] stores a sparse matrix `A`,
//! a right-hand side, and the cone its slack lives in. [`solve`] runs an
//! embedded primal-dual interior point method on the homogeneous self-dual
//! embedding (so infeasibility and unboundedness come out as first-class
//! statuses with certificates, not heuristics); an adapter over the
//! Clarabel solver is available both as an automatic fallback after a
//! numerical failure and as an independent cross-check.
//!
//! PSD slacks use the scaled vectorization of the lower triangle
//! (column-major, off-diagonals times sqrt(2)), so that the Euclidean inner
//! product of two vectorizations equals the trace inner product of the
//! matrices.
//!
//! Programs can be serialized to a plain text form for offline debugging,
//! one constraint block per record; see [`dump_program`] for the format.

mod cones;
mod dense;
mod external;
mod solver;

pub use cones::{smat, svec_into, svec_len, Cone};

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("unparsable program dump at line {line}: {reason}")]
    BadDump { line: usize, reason: String },
}

/// Sparse matrix in triplet form; rows index within one constraint block,
/// columns index program variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        SparseMatrix { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut out = SparseMatrix::new(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                out.push(i, j, m[(i, j)]);
            }
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `out += A x` for a dense vector.
    pub fn mul_vec_add(&self, x: &[f64], out: &mut [f64]) {
        for &(r, c, v) in &self.entries {
            out[r] += v * x[c];
        }
    }
}

/// One cone-tagged affine constraint: `rhs - A x` must lie in `cone`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub cone: Cone,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

/// A conic program `min objective . x` over the given constraint blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub blocks: Vec<ConstraintBlock>,
}

impl ConicProgram {
    pub fn new(num_vars: usize) -> Self {
        ConicProgram { num_vars, objective: vec![0.0; num_vars], blocks: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        if self.objective.len() != self.num_vars {
            return Err(ConicError::Malformed(format!(
                "objective has {} entries for {} variables",
                self.objective.len(),
                self.num_vars
            )));
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(ConicError::Malformed("objective has non-finite entries".into()));
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            let dim = b.cone.dim();
            if let Cone::Soc(len) = b.cone {
                if len == 0 {
                    return Err(ConicError::Malformed(format!(
                        "block {bi}: second-order cone needs at least its scalar component"
                    )));
                }
            }
            if b.rhs.len() != dim {
                return Err(ConicError::Malformed(format!(
                    "block {bi}: rhs has {} entries, cone dimension is {dim}",
                    b.rhs.len()
                )));
            }
            if b.matrix.nrows != dim || b.matrix.ncols != self.num_vars {
                return Err(ConicError::Malformed(format!(
                    "block {bi}: matrix is {}x{}, expected {dim}x{}",
                    b.matrix.nrows, b.matrix.ncols, self.num_vars
                )));
            }
            if b.rhs.iter().any(|v| !v.is_finite())
                || b.matrix.entries.iter().any(|&(_, _, v)| !v.is_finite())
            {
                return Err(ConicError::Malformed(format!("block {bi}: non-finite coefficient")));
            }
            if b.matrix.entries.iter().any(|&(r, c, _)| r >= dim || c >= self.num_vars) {
                return Err(ConicError::Malformed(format!("block {bi}: entry out of bounds")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// The constraints admit no point: certified through the embedding's
    /// dual ray.
    Infeasible,
    /// The objective is unbounded below on the feasible set.
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Primal variable values; meaningful only when `status` is `Optimal`.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Maximum cone violation of `rhs - A x` across blocks at the returned
    /// point (NaN unless optimal).
    pub feas_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    /// Human-readable failure context; empty on success.
    pub diagnostics: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Embedded solver, falling back to the external one on numerical
    /// failure.
    Auto,
    Embedded,
    External,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iterations: usize,
    pub backend: Backend,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { feas_tol: 1e-7, gap_tol: 1e-7, max_iterations: 100, backend: Backend::Auto }
    }
}

/// Solves the program. Deterministic: identical inputs produce identical
/// outputs, including iteration counts. Solver breakdowns are reported
/// in-band as [`SolveStatus::NumericalFailure`] with diagnostics; only a
/// malformed program is an `Err`.
pub fn solve(prog: &ConicProgram, settings: &SolverSettings) -> Result<ConicSolution, ConicError> {
    prog.validate()?;
    Ok(match settings.backend {
        Backend::Embedded => solver::solve_embedded(prog, settings),
        Backend::External => external::solve_external(prog, settings),
        Backend::Auto => {
            let sol = solver::solve_embedded(prog, settings);
            if matches!(sol.status, SolveStatus::NumericalFailure) {
                let fallback = external::solve_external(prog, settings);
                if matches!(fallback.status, SolveStatus::NumericalFailure) {
                    // Keep the embedded diagnostics; they are usually the
                    // more informative of the two.
                    sol
                } else {
                    fallback
                }
            } else {
                sol
            }
        }
    })
}

/// Maximum cone violation of `rhs - A x` over all blocks.
pub fn feasibility_residual(prog: &ConicProgram, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for b in &prog.blocks {
        if b.cone.is_empty() {
            continue;
        }
        let mut slack = b.rhs.clone();
        for &(r, c, v) in b.matrix.entries() {
            slack[r] -= v * x[c];
        }
        worst = worst.max(cones::cone_violation(b.cone, &slack));
    }
    worst
}

/// Real embedding `[[Re H, -Im H], [Im H, Re H]]` of a complex Hermitian
/// matrix. The result is symmetric, is PSD exactly when `H` is, and carries
/// each eigenvalue of `H` twice. Errors when `H` is not Hermitian.
pub fn embed_hermitian(h: &DMatrix<Complex64>) -> Result<DMatrix<f64>, ConicError> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(ConicError::Malformed(format!("matrix is {}x{}, not square", n, h.ncols())));
    }
    let scale = h.iter().fold(0.0f64, |m, v| m.max(v.norm())).max(1.0);
    let mut asym = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            asym = asym.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    if asym > 1e-10 * scale {
        return Err(ConicError::NotHermitian(asym));
    }
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let re = 0.5 * (h[(i, j)].re + h[(j, i)].re);
            let im = 0.5 * (h[(i, j)].im - h[(j, i)].im);
            out[(i, j)] = re;
            out[(n + i, n + j)] = re;
            out[(i, n + j)] = -im;
            out[(n + i, j)] = im;
        }
    }
    Ok(out)
}

/// A Hermitian-valued affine function `constant + sum_j x_{var_j} terms_j`.
#[derive(Debug, Clone)]
pub struct HermitianAffine {
    pub constant: DMatrix<Complex64>,
    pub terms: Vec<(usize, DMatrix<Complex64>)>,
}

/// Converts a Hermitian matrix-inequality `constant + sum x_j terms_j >= 0`
/// into a real PSD constraint block via [`embed_hermitian`]. The embedding
/// commutes with the affine combination, so the block's slack at any `x`
/// equals the embedding of the evaluated Hermitian matrix.
pub fn hermitian_to_real_psd(
    affine: &HermitianAffine,
    num_vars: usize,
) -> Result<ConstraintBlock, ConicError> {
    let order = affine.constant.nrows();
    let embedded_order = 2 * order;
    let dim = svec_len(embedded_order);
    let e0 = embed_hermitian(&affine.constant)?;
    let mut rhs = vec![0.0; dim];
    svec_into(&e0, &mut rhs);
    let mut matrix = SparseMatrix::new(dim, num_vars);
    let mut buf = vec![0.0; dim];
    for (var, term) in &affine.terms {
        if *var >= num_vars {
            return Err(ConicError::Malformed(format!(
                "term references variable {var} of {num_vars}"
            )));
        }
        if term.nrows() != order || term.ncols() != order {
            return Err(ConicError::Malformed(format!(
                "term for variable {var} is {}x{}, expected {order}x{order}",
                term.nrows(),
                term.ncols()
            )));
        }
        let et = embed_hermitian(term)?;
        svec_into(&et, &mut buf);
        for (k, &v) in buf.iter().enumerate() {
            matrix.push(k, *var, -v);
        }
    }
    Ok(ConstraintBlock { cone: Cone::Psd(embedded_order), matrix, rhs })
}

/// Serializes a program to the plain text dump format:
///
/// ```text
/// conic-program v1
/// vars <n>
/// min <idx>:<coeff> ...          (nonzero objective entries)
/// block nonneg <len> | soc <len> | psd <order>
/// rhs <idx>:<value> ...          (nonzero right-hand side entries)
/// a <row> <col> <value>          (one line per matrix entry)
/// end
/// ```
///
/// Values are printed with enough digits to round-trip exactly through
/// [`parse_program`].
pub fn dump_program(prog: &ConicProgram) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    out.push_str("conic-program v1\n");
    let _ = writeln!(out, "vars {}", prog.num_vars);
    out.push_str("min");
    for (j, &v) in prog.objective.iter().enumerate() {
        if v != 0.0 {
            let _ = write!(out, " {j}:{v:e}");
        }
    }
    out.push('\n');
    for b in &prog.blocks {
        match b.cone {
            Cone::Nonneg(n) => {
                let _ = writeln!(out, "block nonneg {n}");
            }
            Cone::Soc(n) => {
                let _ = writeln!(out, "block soc {n}");
            }
            Cone::Psd(d) => {
                let _ = writeln!(out, "block psd {d}");
            }
        }
        out.push_str("rhs");
        for (i, &v) in b.rhs.iter().enumerate() {
            if v != 0.0 {
                let _ = write!(out, " {i}:{v:e}");
            }
        }
        out.push('\n');
        for &(r, c, v) in b.matrix.entries() {
            let _ = writeln!(out, "a {r} {c} {v:e}");
        }
        out.push_str("end\n");
    }
    out
}

/// Parses the format produced by [`dump_program`].
pub fn parse_program(text: &str) -> Result<ConicProgram, ConicError> {
    let bad = |line: usize, reason: &str| ConicError::BadDump { line, reason: reason.to_string() };
    let mut lines = text.lines().enumerate();
    let (ln, header) = lines.next().ok_or_else(|| bad(0, "empty input"))?;
    if header.trim() != "conic-program v1" {
        return Err(bad(ln + 1, "missing header"));
    }
    let mut prog = ConicProgram::new(0);
    let mut current: Option<ConstraintBlock> = None;
    for (ln, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let head = tok.next().unwrap();
        match head {
            "vars" => {
                let n: usize = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad(ln + 1, "vars needs a count"))?;
                prog.num_vars = n;
                prog.objective = vec![0.0; n];
            }
            "min" => {
                for pair in tok {
                    let (idx, val) = parse_indexed(pair).ok_or_else(|| bad(ln + 1, pair))?;
                    if idx >= prog.num_vars {
                        return Err(bad(ln + 1, "objective index out of range"));
                    }
                    prog.objective[idx] = val;
                }
            }
            "block" => {
                if current.is_some() {
                    return Err(bad(ln + 1, "previous block not terminated"));
                }
                let kind = tok.next().ok_or_else(|| bad(ln + 1, "block needs a kind"))?;
                let param: usize = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad(ln + 1, "block needs a size"))?;
                let cone = match kind {
                    "nonneg" => Cone::Nonneg(param),
                    "soc" => Cone::Soc(param),
                    "psd" => Cone::Psd(param),
                    _ => return Err(bad(ln + 1, "unknown cone kind")),
                };
                current = Some(ConstraintBlock {
                    cone,
                    matrix: SparseMatrix::new(cone.dim(), prog.num_vars),
                    rhs: vec![0.0; cone.dim()],
                });
            }
            "rhs" => {
                let blk = current.as_mut().ok_or_else(|| bad(ln + 1, "rhs outside block"))?;
                for pair in tok {
                    let (idx, val) = parse_indexed(pair).ok_or_else(|| bad(ln + 1, pair))?;
                    if idx >= blk.rhs.len() {
                        return Err(bad(ln + 1, "rhs index out of range"));
                    }
                    blk.rhs[idx] = val;
                }
            }
            "a" => {
                let blk = current.as_mut().ok_or_else(|| bad(ln + 1, "entry outside block"))?;
                let r: usize = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad(ln + 1, "bad row"))?;
                let c: usize = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad(ln + 1, "bad col"))?;
                let v: f64 = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad(ln + 1, "bad value"))?;
                if r >= blk.matrix.nrows() || c >= blk.matrix.ncols() {
                    return Err(bad(ln + 1, "entry out of range"));
                }
                blk.matrix.push(r, c, v);
            }
            "end" => {
                let blk = current.take().ok_or_else(|| bad(ln + 1, "end outside block"))?;
                prog.blocks.push(blk);
            }
            _ => return Err(bad(ln + 1, "unknown record")),
        }
    }
    if current.is_some() {
        return Err(bad(text.lines().count(), "unterminated block"));
    }
    prog.validate()?;
    Ok(prog)
}

fn parse_indexed(pair: &str) -> Option<(usize, f64)> {
    let (i, v) = pair.split_once(':')?;
    Some((i.parse().ok()?, v.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn settings(backend: Backend) -> SolverSettings {
        SolverSettings { backend, ..SolverSettings::default() }
    }

    // 1. One-variable LP corner: min x subject to x >= 3.
    #[test]
    fn lp_corner() {
        let mut prog = ConicProgram::new(1);
        prog.objective = vec![1.0];
        let mut a = SparseMatrix::new(1, 1);
        a.push(0, 0, -1.0);
        prog.blocks.push(ConstraintBlock { cone: Cone::Nonneg(1), matrix: a, rhs: vec![-3.0] });
        let sol = solve(&prog, &settings(Backend::Embedded)).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-6, "x = {}", sol.x[0]);
        assert!((sol.objective - 3.0).abs() < 1e-6);
        assert!(sol.feas_residual <= 1e-7);
    }

    // 2. SOC projection: min t with t >= ||x - (1,2)|| pins x at the center
    //    with t = 0.
    #[test]
    fn soc_projection() {
        let mut prog = ConicProgram::new(3);
        prog.objective = vec![1.0, 0.0, 0.0];
        let mut a = SparseMatrix::new(3, 3);
        a.push(0, 0, -1.0);
        a.push(1, 1, -1.0);
        a.push(2, 2, -1.0);
        prog.blocks.push(ConstraintBlock {
            cone: Cone::Soc(3),
            matrix: a,
            rhs: vec![0.0, -1.0, -2.0],
        });
        let sol = solve(&prog, &settings(Backend::Embedded)).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.x[0].abs() < 1e-6, "t = {}", sol.x[0]);
        assert!((sol.x[1] - 1.0).abs() < 1e-4);
        assert!((sol.x[2] - 2.0).abs() < 1e-4);
    }

    // 3. Diagonal SDP: min trace(X) with X11 >= 1, X22 >= 2, X PSD -> 3.
    fn diag_sdp_program() -> ConicProgram {
        let mut prog = ConicProgram::new(3); // (x11, x21, x22)
        prog.objective = vec![1.0, 0.0, 1.0];
        let mut lin = SparseMatrix::new(2, 3);
        lin.push(0, 0, -1.0);
        lin.push(1, 2, -1.0);
        prog.blocks.push(ConstraintBlock {
            cone: Cone::Nonneg(2),
            matrix: lin,
            rhs: vec![-1.0, -2.0],
        });
        let mut psd = SparseMatrix::new(3, 3);
        psd.push(0, 0, -1.0);
        psd.push(1, 1, -std::f64::consts::SQRT_2);
        psd.push(2, 2, -1.0);
        prog.blocks.push(ConstraintBlock {
            cone: Cone::Psd(2),
            matrix: psd,
            rhs: vec![0.0; 3],
        });
        prog
    }

    #[test]
    fn diagonal_sdp() {
        let sol = solve(&diag_sdp_program(), &settings(Backend::Embedded)).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-6, "obj = {}", sol.objective);
        assert!((sol.x[0] - 1.0).abs() < 1e-5);
        assert!(sol.x[1].abs() < 1e-5);
        assert!((sol.x[2] - 2.0).abs() < 1e-5);
    }

    // 4. Random diagonal SDPs match the separable closed form
    //    sum_i d_i * l_i.
    #[test]
    fn random_diagonal_sdps() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let d = rng.random_range(2..5usize);
            let nv = svec_len(d);
            let mut prog = ConicProgram::new(nv);
            // Variable k is svec coordinate k of X (lower col-major).
            let mut expected = 0.0;
            let mut lin = SparseMatrix::new(d, nv);
            let mut rhs = vec![0.0; d];
            let mut k = 0;
            for j in 0..d {
                let cost = rng.random_range(0.5..3.0);
                let lower = rng.random_range(0.5..2.0);
                prog.objective[k] = cost;
                lin.push(j, k, -1.0);
                rhs[j] = -lower;
                expected += cost * lower;
                k += d - j;
            }
            prog.blocks.push(ConstraintBlock { cone: Cone::Nonneg(d), matrix: lin, rhs });
            let mut psd = SparseMatrix::new(nv, nv);
            for i in 0..nv {
                psd.push(i, i, -1.0);
            }
            prog.blocks.push(ConstraintBlock {
                cone: Cone::Psd(d),
                matrix: psd,
                rhs: vec![0.0; nv],
            });
            let sol = solve(&prog, &settings(Backend::Embedded)).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            assert!(
                (sol.objective - expected).abs() < 1e-5 * expected.max(1.0),
                "obj {} vs {}",
                sol.objective,
                expected
            );
        }
    }

    // 5. Conflicting bounds are reported as infeasible, not as a failure.
    #[test]
    fn detects_infeasible() {
        let mut prog = ConicProgram::new(1);
        prog.objective = vec![1.0];
        let mut a = SparseMatrix::new(2, 1);
        a.push(0, 0, -1.0); // x >= 3
        a.push(1, 0, 1.0); // x <= 2
        prog.blocks.push(ConstraintBlock {
            cone: Cone::Nonneg(2),
            matrix: a,
            rhs: vec![-3.0, 2.0],
        });
        let sol = solve(&prog, &settings(Backend::Embedded)).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        let ext = solve(&prog, &settings(Backend::External)).unwrap();
        assert_eq!(ext.status, SolveStatus::Infeasible);
    }

    // 6. A descent direction with no lower bound is reported as unbounded.
    #[test]
    fn detects_unbounded() {
        let mut prog = ConicProgram::new(1);
        prog.objective = vec![-1.0];
        let mut a = SparseMatrix::new(1, 1);
        a.push(0, 0, -1.0); // x >= 0
        prog.blocks.push(ConstraintBlock { cone: Cone::Nonneg(1), matrix: a, rhs: vec![0.0] });
        let sol = solve(&prog, &settings(Backend::Embedded)).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    // 7. Hermitian embedding: doubles eigenvalues, preserves PSD-ness, and
    //    rejects non-Hermitian input.
    #[test]
    fn hermitian_embedding_eigenvalues() {
        let i = Complex64::new(0.0, 1.0);
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(2.0, 0.0), i, -i, Complex64::new(2.0, 0.0)],
        );
        let e = embed_hermitian(&h).unwrap();
        assert_eq!(e.nrows(), 4);
        let eigs = dense::symmetric_eigenvalues(e);
        let expected = [1.0, 1.0, 3.0, 3.0];
        for (got, want) in eigs.iter().zip(expected) {
            assert!((got - want).abs() < 1e-9, "{eigs:?}");
        }

        let mut bad = h.clone();
        bad[(0, 1)] = Complex64::new(1.0, 0.5);
        assert!(matches!(embed_hermitian(&bad), Err(ConicError::NotHermitian(_))));
    }

    // 8. Embedded spectrum equals a synthesized spectrum (each value twice)
    //    for random Hermitian matrices built from a known eigensystem.
    #[test]
    fn hermitian_embedding_matches_known_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let d = rng.random_range(2..5usize);
            let a = DMatrix::from_fn(d, d, |_, _| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let q = a.qr().q();
            let mut lambda: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            lambda.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let diag = DMatrix::from_fn(d, d, |r, c| {
                if r == c { Complex64::new(lambda[r], 0.0) } else { Complex64::default() }
            });
            let h = &q * diag * q.adjoint();
            let e = embed_hermitian(&h).unwrap();
            let eigs = dense::symmetric_eigenvalues(e);
            for (k, &l) in lambda.iter().enumerate() {
                assert!((eigs[2 * k] - l).abs() < 1e-9);
                assert!((eigs[2 * k + 1] - l).abs() < 1e-9);
            }
        }
    }

    // 9. The embedding commutes with affine combination: the block slack at
    //    any x equals the embedding of the evaluated Hermitian matrix.
    #[test]
    fn embedding_commutes_with_affine_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = 3;
        let rand_herm = |rng: &mut ChaCha8Rng| {
            let a = DMatrix::from_fn(d, d, |_, _| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
        };
        let h0 = rand_herm(&mut rng);
        let h1 = rand_herm(&mut rng);
        let h2 = rand_herm(&mut rng);
        let affine = HermitianAffine {
            constant: h0.clone(),
            terms: vec![(0, h1.clone()), (1, h2.clone())],
        };
        let block = hermitian_to_real_psd(&affine, 2).unwrap();
        let x = [0.3, -1.2];
        let mut slack = block.rhs.clone();
        for &(r, c, v) in block.matrix.entries() {
            slack[r] -= v * x[c];
        }
        let direct = embed_hermitian(
            &(&h0 + &h1 * Complex64::new(x[0], 0.0) + &h2 * Complex64::new(x[1], 0.0)),
        )
        .unwrap();
        let slack_mat = smat(&slack, 2 * d);
        assert!((slack_mat - direct).norm() < 1e-12);
    }

    // 10. A Hermitian LMI solved through the embedding: largest t with
    //     H - t*I PSD is the smallest eigenvalue of H.
    #[test]
    fn hermitian_lmi_minimum_eigenvalue() {
        let i = Complex64::new(0.0, 1.0);
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(2.0, 0.0), i, -i, Complex64::new(2.0, 0.0)],
        );
        let ident = DMatrix::from_diagonal_element(2, 2, Complex64::new(-1.0, 0.0));
        let affine = HermitianAffine { constant: h, terms: vec![(0, ident)] };
        let block = hermitian_to_real_psd(&affine, 1).unwrap();
        let mut prog = ConicProgram::new(1);
        prog.objective = vec![-1.0]; // maximize t
        prog.blocks.push(block);
        let sol = solve(&prog, &settings(Backend::Embedded)).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-6, "lambda_min = {}", sol.x[0]);
    }

    // 11. Dump/parse round-trip preserves the program exactly.
    #[test]
    fn dump_roundtrip() {
        let prog = diag_sdp_program();
        let text = dump_program(&prog);
        let back = parse_program(&text).unwrap();
        assert_eq!(prog, back);
        assert!(parse_program("bogus").is_err());
    }

    // 12. Identical inputs give bitwise identical outputs.
    #[test]
    fn deterministic_resolve() {
        let prog = diag_sdp_program();
        let a = solve(&prog, &settings(Backend::Embedded)).unwrap();
        let b = solve(&prog, &settings(Backend::Embedded)).unwrap();
        assert_eq!(a.x, b.x);
        assert!(a.objective.to_bits() == b.objective.to_bits());
        assert_eq!(a.iterations, b.iterations);
    }

    // 13. Embedded and external backends agree on a mixed program with
    //     off-diagonal PSD structure (also exercises the svec order mapping
    //     in the adapter).
    #[test]
    fn backends_agree() {
        // min y such that [[1, .3, y], [.3, 1, .7], [y, .7, 1]] is PSD,
        // plus a SOC coupling ||(y, w)|| <= 2 and w >= 0.3.
        let mut prog = ConicProgram::new(2);
        prog.objective = vec![1.0, 0.0];
        let d = 3;
        let nv = svec_len(d);
        let mut psd = SparseMatrix::new(nv, 2);
        let mut rhs = vec![0.0; nv];
        // lower col-major order: (00,10,20,11,21,22)
        rhs[0] = 1.0;
        rhs[1] = 0.3 * std::f64::consts::SQRT_2;
        rhs[3] = 1.0;
        rhs[4] = 0.7 * std::f64::consts::SQRT_2;
        rhs[5] = 1.0;
        psd.push(2, 0, -std::f64::consts::SQRT_2); // entry (2,0) is y
        prog.blocks.push(ConstraintBlock { cone: Cone::Psd(d), matrix: psd, rhs });
        let mut soc = SparseMatrix::new(3, 2);
        soc.push(1, 0, -1.0);
        soc.push(2, 1, -1.0);
        prog.blocks.push(ConstraintBlock {
            cone: Cone::Soc(3),
            matrix: soc,
            rhs: vec![2.0, 0.0, 0.0],
        });
        let mut lin = SparseMatrix::new(1, 2);
        lin.push(0, 1, -1.0);
        prog.blocks.push(ConstraintBlock { cone: Cone::Nonneg(1), matrix: lin, rhs: vec![-0.3] });

        let emb = solve(&prog, &settings(Backend::Embedded)).unwrap();
        let ext = solve(&prog, &settings(Backend::External)).unwrap();
        assert_eq!(emb.status, SolveStatus::Optimal, "{}", emb.diagnostics);
        assert_eq!(ext.status, SolveStatus::Optimal, "{}", ext.diagnostics);
        assert!(
            (emb.objective - ext.objective).abs() < 1e-5,
            "embedded {} vs external {}",
            emb.objective,
            ext.objective
        );
        // Only y = x[0] is pinned by the objective; w is any feasible value.
        assert!((emb.x[0] - ext.x[0]).abs() < 1e-4, "{} vs {}", emb.x[0], ext.x[0]);
        assert!(feasibility_residual(&prog, &emb.x) < 1e-6);
        assert!(feasibility_residual(&prog, &ext.x) < 1e-6);
    }

    // 14. Validation rejects shape mismatches instead of solving garbage.
    #[test]
    fn validation_rejects_malformed() {
        let mut prog = ConicProgram::new(2);
        prog.objective = vec![1.0]; // wrong length
        assert!(matches!(solve(&prog, &SolverSettings::default()), Err(ConicError::Malformed(_))));

        let mut prog2 = ConicProgram::new(1);
        prog2.objective = vec![1.0];
        prog2.blocks.push(ConstraintBlock {
            cone: Cone::Nonneg(2),
            matrix: SparseMatrix::new(1, 1), // dim mismatch
            rhs: vec![0.0, 0.0],
        });
        assert!(prog2.validate().is_err());
    }
}
