//! Adapter over the Clarabel cone solver, used as the fallback backend when
//! the embedded method reports a numerical failure, and as an independent
//! cross-check in tests.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::cones::Cone;
use super::{ConicProgram, ConicSolution, SolveStatus, SolverSettings};

/// Maps a local svec row index from this crate's convention (lower
/// triangle, column-major) to Clarabel's (upper triangle, column-major).
/// Both conventions scale off-diagonals by sqrt(2), so only the order
/// differs.
fn remap_psd_row(k: usize, d: usize) -> usize {
    // Recover the (i, j) pair, i >= j, from the lower column-major index.
    let mut j = 0;
    let mut base = 0;
    loop {
        let col_len = d - j;
        if k < base + col_len {
            break;
        }
        base += col_len;
        j += 1;
    }
    let i = j + (k - base);
    // Upper column-major position of entry (j, i).
    i * (i + 1) / 2 + j
}

pub(super) fn solve_external(prog: &ConicProgram, settings: &SolverSettings) -> ConicSolution {
    let n = prog.num_vars;
    let mut m = 0usize;
    let mut cones = Vec::new();
    let mut b = Vec::new();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();

    for block in &prog.blocks {
        if block.cone.is_empty() {
            continue;
        }
        let dim = block.cone.dim();
        match block.cone {
            Cone::Nonneg(len) => cones.push(SupportedConeT::NonnegativeConeT(len)),
            Cone::Soc(len) => cones.push(SupportedConeT::SecondOrderConeT(len)),
            Cone::Psd(d) => cones.push(SupportedConeT::PSDTriangleConeT(d)),
        }
        let remap = |r: usize| -> usize {
            match block.cone {
                Cone::Psd(d) => remap_psd_row(r, d),
                _ => r,
            }
        };
        let mut rhs_rows = vec![0.0; dim];
        for (r, &v) in block.rhs.iter().enumerate() {
            rhs_rows[remap(r)] = v;
        }
        b.extend_from_slice(&rhs_rows);
        for &(r, col, v) in block.matrix.entries() {
            if v != 0.0 {
                triplets.push((m + remap(r), col, v));
            }
        }
        m += dim;
    }

    triplets.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(triplets.len());
    let mut nzval = Vec::with_capacity(triplets.len());
    {
        let mut idx = 0;
        for col in 0..n {
            colptr[col] = idx;
            while idx < triplets.len() && triplets[idx].1 == col {
                rowval.push(triplets[idx].0);
                nzval.push(triplets[idx].2);
                idx += 1;
            }
        }
        colptr[n] = idx;
    }
    let a = CscMatrix::new(m, n, colptr, rowval, nzval);
    let p = CscMatrix::<f64>::zeros((n, n));

    let clarabel_settings = DefaultSettings {
        verbose: false,
        max_iter: settings.max_iterations as u32,
        tol_feas: settings.feas_tol,
        tol_gap_abs: settings.gap_tol,
        tol_gap_rel: settings.gap_tol,
        ..Default::default()
    };

    let mut solver =
        match DefaultSolver::new(&p, &prog.objective, &a, &b, &cones, clarabel_settings) {
            Ok(s) => s,
            Err(e) => {
                return ConicSolution {
                    status: SolveStatus::NumericalFailure,
                    x: vec![0.0; n],
                    objective: f64::NAN,
                    feas_residual: f64::NAN,
                    gap: f64::NAN,
                    iterations: 0,
                    diagnostics: format!("external solver setup failed: {e:?}"),
                }
            }
        };
    solver.solve();
    let sol = &solver.solution;
    let x = sol.x.clone();
    let iterations = sol.iterations as usize;
    let (status, objective, feas) = match sol.status {
        SolverStatus::Solved => {
            let feas = super::feasibility_residual(prog, &x);
            (SolveStatus::Optimal, sol.obj_val, feas)
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            (SolveStatus::Infeasible, f64::NAN, f64::NAN)
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            (SolveStatus::Unbounded, f64::NEG_INFINITY, f64::NAN)
        }
        other => {
            return ConicSolution {
                status: SolveStatus::NumericalFailure,
                x,
                objective: f64::NAN,
                feas_residual: f64::NAN,
                gap: f64::NAN,
                iterations,
                diagnostics: format!("external solver status {other:?}"),
            }
        }
    };
    ConicSolution {
        status,
        x,
        objective,
        feas_residual: feas,
        gap: f64::NAN,
        iterations,
        diagnostics: String::new(),
    }
}
