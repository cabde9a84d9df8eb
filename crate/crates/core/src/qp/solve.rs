//! Convex QP solve backed by the Clarabel interior-point solver.
//!
//! Clarabel factors the sparse quasi-definite KKT system with a fill-reducing
//! ordering, so the banded trajectory structure solves in near-linear time.
//! Residuals in the report are recomputed here from the returned primal and
//! dual vectors rather than taken from the solver.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::qdldl::{QDLDLFactorisation, QDLDLSettingsBuilder};
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::Serialize;

use super::sparse::{SparseMatrix, TripletBuilder};
use super::QpProblem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveSettings {
    /// Max absolute equality violation.
    pub eq_tol: f64,
    /// Max absolute inequality violation.
    pub ineq_tol: f64,
    /// Relative stationarity and complementarity tolerance.
    pub dual_tol: f64,
    pub max_iter: u32,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            eq_tol: 1e-6,
            ineq_tol: 1e-8,
            dual_tol: 1e-6,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KktResiduals {
    /// `max |A_eq x - b_eq|`.
    pub primal_eq: f64,
    /// `max (A_ineq x - b_ineq)_+`.
    pub primal_ineq: f64,
    /// `|H x + f + A_eq' y + A_ineq' z|_inf`, relative to the largest term.
    pub stationarity: f64,
    /// `max |z_i (b - A x)_i|`, relative to `max(1, |objective|)`.
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub objective: f64,
    pub kkt_residuals: KktResiduals,
    pub iterations: u32,
    pub wall_time: f64,
    pub status: SolveStatus,
}

fn to_csc(m: &SparseMatrix) -> CscMatrix<f64> {
    CscMatrix::new(
        m.nrows,
        m.ncols,
        m.col_ptr.clone(),
        m.row_idx.clone(),
        m.values.clone(),
    )
}

/// Bounds implied by single-entry inequality rows, used to snap the interior
/// point onto the box before residuals are measured.
fn implied_bounds(problem: &QpProblem) -> (Vec<f64>, Vec<f64>) {
    let n = problem.n_vars();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    for (r, row) in problem.a_ineq.row_patterns().iter().enumerate() {
        if let [(var, a)] = row.as_slice() {
            let limit = problem.b_ineq[r] / a;
            if *a > 0.0 {
                hi[*var] = hi[*var].min(limit);
            } else if *a < 0.0 {
                lo[*var] = lo[*var].max(limit);
            }
        }
    }
    (lo, hi)
}

struct BackendRun {
    x: Vec<f64>,
    z: Vec<f64>,
    status: SolverStatus,
    iterations: u32,
}

/// One Clarabel solve of `min x'Px/2 + q'x  s.t.  [A_eq; A_ineq] x + s = b`,
/// with `s` in the zero cone for equality rows and the nonnegative orthant
/// for inequality rows.
fn run_backend(
    p_upper: &CscMatrix<f64>,
    q: &[f64],
    a: &CscMatrix<f64>,
    b: &[f64],
    m_eq: usize,
    settings: &SolveSettings,
) -> Result<BackendRun> {
    let m_ineq = b.len() - m_eq;
    let mut cones = Vec::new();
    if m_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(m_eq));
    }
    if m_ineq > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(m_ineq));
    }
    let backend_settings = DefaultSettingsBuilder::default()
        .verbose(std::env::var_os("QUADCAM_SOLVER_VERBOSE").is_some())
        .max_iter(settings.max_iter)
        .presolve_enable(false)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .tol_ktratio(1e-8)
        .max_threads(1)
        .build()
        .map_err(|e| Error::Parameter(format!("solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(p_upper, q, a, b, &cones, backend_settings)
        .map_err(|e| Error::Parameter(format!("solver setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    Ok(BackendRun {
        x: sol.x.clone(),
        z: sol.z.clone(),
        status: sol.status,
        iterations: sol.iterations,
    })
}

/// Regularization for the quasi-definite factorization; removed again by
/// iterative refinement against the exact KKT matrix.
const KKT_REG: f64 = 1e-10;
const REFINE_STEPS: usize = 60;

/// Minimizer of the equality-constrained problem from one sparse `LDL'`
/// factorization of `[H A_eq'; A_eq 0]`. `None` if the factorization fails
/// or refinement does not reach a consistent solution.
fn solve_equality_kkt(problem: &QpProblem) -> Option<BackendRun> {
    solve_kkt(&problem.h, &problem.f, &problem.a_eq, &problem.b_eq)
}

/// Minimizer of `x'Hx/2 + f'x` subject to `A x = b`, with the multipliers of
/// `A x = b` returned in `z`.
fn solve_kkt(h: &SparseMatrix, f: &[f64], a: &SparseMatrix, b: &[f64]) -> Option<BackendRun> {
    let n = h.ncols;
    let m = a.nrows;
    let dim = n + m;

    let mut kb = TripletBuilder::new(dim, dim);
    for (r, c, v) in h.upper_triangle().iter() {
        kb.push(r, c, v);
    }
    for (r, c, v) in a.iter() {
        kb.push(c, n + r, v);
    }
    let exact = kb.build();
    for i in 0..n {
        kb.push(i, i, KKT_REG);
    }
    for j in 0..m {
        kb.push(n + j, n + j, -KKT_REG);
    }
    let regularized = kb.build();

    let signs: Vec<i8> = (0..dim).map(|i| if i < n { 1 } else { -1 }).collect();
    let opts = QDLDLSettingsBuilder::default().Dsigns(signs).build().ok()?;
    let mut ldl = QDLDLFactorisation::new(&to_csc(&regularized), Some(opts)).ok()?;

    let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
    rhs.extend_from_slice(b);
    let rhs_norm = rhs.iter().fold(1f64, |a, v| a.max(v.abs()));

    let sym_mul = |v: &[f64]| -> Vec<f64> {
        let mut out = exact.mul_vec(v);
        let lower = exact.mul_t_vec(v);
        for (i, o) in out.iter_mut().enumerate() {
            *o += lower[i];
        }
        for (r, c, val) in exact.iter() {
            if r == c {
                out[r] -= val * v[r];
            }
        }
        out
    };

    let mut sol = rhs.clone();
    ldl.solve(&mut sol);
    let mut iterations = 1;
    let mut last_err = f64::INFINITY;
    for _ in 0..REFINE_STEPS {
        let ks = sym_mul(&sol);
        let mut res: Vec<f64> = rhs.iter().zip(&ks).map(|(b, k)| b - k).collect();
        let err = res.iter().fold(0f64, |a, v| a.max(v.abs()));
        if err <= 1e-15 * rhs_norm || err >= last_err {
            break;
        }
        last_err = err;
        ldl.solve(&mut res);
        for (s, d) in sol.iter_mut().zip(&res) {
            *s += d;
        }
        iterations += 1;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let z = sol.split_off(n);
    Some(BackendRun {
        x: sol,
        z,
        status: SolverStatus::Solved,
        iterations,
    })
}

/// Primal active-set refinement started from a feasible point `x`, with the
/// rows in `active` (tight at `x`) as the initial working set. Each pass
/// solves the equality problem on the working set, steps towards it until a
/// new row blocks, and drops the most negative multiplier once the step is
/// unblocked. Returns `None` if a factorization fails or the pass limit is hit.
fn polish(problem: &QpProblem, x: Vec<f64>, mut active: Vec<usize>) -> Option<BackendRun> {
    let m_eq = problem.a_eq.nrows;
    let m_ineq = problem.a_ineq.nrows;
    let rows = problem.a_ineq.row_patterns();
    let row_dot = |r: usize, v: &[f64]| rows[r].iter().map(|&(c, a)| a * v[c]).sum::<f64>();
    let mut x = x;
    let mut in_set = vec![false; m_ineq];
    active.sort_unstable();
    active.dedup();
    for &r in &active {
        in_set[r] = true;
    }
    let mut total_iterations = 0;
    for _ in 0..POLISH_PASSES {
        let mut tb = TripletBuilder::new(active.len(), problem.n_vars());
        for (k, &r) in active.iter().enumerate() {
            for &(c, v) in &rows[r] {
                tb.push(k, c, v);
            }
        }
        let a = problem.a_eq.vstack(&tb.build());
        let mut b = problem.b_eq.clone();
        b.extend(active.iter().map(|&r| problem.b_ineq[r]));
        let run = solve_kkt(&problem.h, &problem.f, &a, &b)?;
        total_iterations += run.iterations;

        let step: Vec<f64> = run.x.iter().zip(&x).map(|(t, c)| t - c).collect();
        let mut alpha = 1.0;
        let mut blocking = None;
        for r in (0..m_ineq).filter(|&r| !in_set[r]) {
            let rate = row_dot(r, &step);
            if rate > 0.0 {
                let room = (problem.b_ineq[r] - row_dot(r, &x)).max(0.0);
                if room < alpha * rate {
                    alpha = room / rate;
                    blocking = Some(r);
                }
            }
        }
        if let Some(r) = blocking {
            for (xi, d) in x.iter_mut().zip(&step) {
                *xi += alpha * d;
            }
            active.push(r);
            in_set[r] = true;
            continue;
        }

        x = run.x;
        let scale = run.z.iter().fold(1f64, |m, v| m.max(v.abs()));
        let most_negative = (0..active.len())
            .map(|k| (k, run.z[m_eq + k]))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .filter(|&(_, z)| z < -1e-10 * scale);
        if let Some((k, _)) = most_negative {
            in_set[active.remove(k)] = false;
            continue;
        }

        let mut z = run.z[..m_eq].to_vec();
        z.resize(m_eq + m_ineq, 0.0);
        for (k, &r) in active.iter().enumerate() {
            z[m_eq + r] = run.z[m_eq + k].max(0.0);
        }
        return Some(BackendRun {
            x,
            z,
            status: SolverStatus::Solved,
            iterations: total_iterations,
        });
    }
    None
}

const POLISH_PASSES: usize = 400;

fn backend_converged(status: SolverStatus) -> bool {
    matches!(status, SolverStatus::Solved | SolverStatus::AlmostSolved)
}

/// Solves the convex QP. Non-optimal outcomes are reported through
/// [`SolveReport::status`] together with the best iterate.
///
/// The equality-constrained minimizer is computed first by a direct sparse
/// factorization and the full problem is re-centered on it. After the shift
/// the linear cost term lies in the row space of `A_eq`, so it is constant on
/// the feasible set and the interior point tolerances act on the part of the
/// objective the inequalities change, not on the (often much larger) keyframe
/// offset terms.
pub fn solve_qp(problem: &QpProblem, settings: &SolveSettings) -> Result<(Vec<f64>, SolveReport)> {
    problem.check_shapes()?;
    let start = Instant::now();
    let m_eq = problem.a_eq.nrows;

    let p = to_csc(&problem.h.upper_triangle());
    let centre_run = match solve_equality_kkt(problem) {
        Some(run) => run,
        None => run_backend(
            &p,
            &problem.f,
            &to_csc(&problem.a_eq),
            &problem.b_eq,
            m_eq,
            settings,
        )?,
    };
    let mut iterations = centre_run.iterations;

    // An equality minimizer that already satisfies every inequality row is
    // the minimizer of the full problem, with all inequality multipliers zero.
    let centre_feasible = backend_converged(centre_run.status)
        && problem
            .a_ineq
            .mul_vec(&centre_run.x)
            .iter()
            .zip(&problem.b_ineq)
            .all(|(ax, b)| ax - b <= settings.ineq_tol);

    let run = if problem.a_ineq.nrows == 0 || !backend_converged(centre_run.status) {
        centre_run
    } else if centre_feasible {
        let mut z = centre_run.z;
        z.resize(m_eq + problem.a_ineq.nrows, 0.0);
        BackendRun { z, ..centre_run }
    } else {
        let centre = centre_run.x;
        let hc = problem.h.mul_vec(&centre);
        let q: Vec<f64> = hc.iter().zip(&problem.f).map(|(a, b)| a + b).collect();
        let mut b: Vec<f64> = problem
            .a_eq
            .mul_vec(&centre)
            .iter()
            .zip(&problem.b_eq)
            .map(|(ax, b)| b - ax)
            .collect();
        b.extend(
            problem
                .a_ineq
                .mul_vec(&centre)
                .iter()
                .zip(&problem.b_ineq)
                .map(|(ax, b)| b - ax),
        );
        let a = to_csc(&problem.a_eq.vstack(&problem.a_ineq));
        let mut shifted = run_backend(&p, &q, &a, &b, m_eq, settings)?;
        for (d, c) in shifted.x.iter_mut().zip(&centre) {
            *d += c;
        }
        iterations += shifted.iterations;
        let stopped = matches!(
            shifted.status,
            SolverStatus::PrimalInfeasible
                | SolverStatus::AlmostPrimalInfeasible
                | SolverStatus::MaxIterations
                | SolverStatus::MaxTime
        );
        if !stopped {
            // Start from the interior iterate moved onto the implied box, with
            // rows that are tight there and carry a dominant multiplier.
            let (lo, hi) = implied_bounds(problem);
            let start: Vec<f64> = shifted
                .x
                .iter()
                .zip(lo.iter().zip(&hi))
                .map(|(v, (l, h))| if l <= h { v.clamp(*l, *h) } else { *v })
                .collect();
            let slack: Vec<f64> = problem
                .a_ineq
                .mul_vec(&start)
                .iter()
                .zip(&problem.b_ineq)
                .map(|(ax, b)| b - ax)
                .collect();
            let active: Vec<usize> = (0..problem.a_ineq.nrows)
                .filter(|&r| slack[r] <= 1e-6 && shifted.z[m_eq + r] > slack[r])
                .collect();
            if let Some(polished) = polish(problem, start, active) {
                iterations += polished.iterations;
                shifted = polished;
            }
        }
        shifted
    };

    let mut x = run.x;
    let (lo, hi) = implied_bounds(problem);
    for ((v, l), h) in x.iter_mut().zip(&lo).zip(&hi) {
        if l <= h {
            *v = v.clamp(*l, *h);
        }
    }
    let (y, z) = run.z.split_at(m_eq);
    let objective = problem.objective(&x);
    let residuals = kkt_residuals(problem, &x, y, z, objective);

    let status = match run.status {
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIter,
        // Independent residuals decide; a stalled but accurate iterate counts.
        _ if residuals.primal_eq <= settings.eq_tol
            && residuals.primal_ineq <= settings.ineq_tol
            && residuals.stationarity <= settings.dual_tol
            && residuals.complementarity <= settings.dual_tol =>
        {
            SolveStatus::Optimal
        }
        _ => SolveStatus::MaxIter,
    };

    Ok((
        x,
        SolveReport {
            objective,
            kkt_residuals: residuals,
            iterations,
            wall_time: start.elapsed().as_secs_f64(),
            status,
        },
    ))
}

pub(crate) fn kkt_residuals(
    problem: &QpProblem,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    objective: f64,
) -> KktResiduals {
    let ax_eq = problem.a_eq.mul_vec(x);
    let primal_eq = ax_eq
        .iter()
        .zip(&problem.b_eq)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let ax_in = problem.a_ineq.mul_vec(x);
    let primal_ineq = ax_in
        .iter()
        .zip(&problem.b_ineq)
        .map(|(a, b)| (a - b).max(0.0))
        .fold(0.0, f64::max);

    let hx = problem.h.mul_vec(x);
    let aty = problem.a_eq.mul_t_vec(y);
    let atz = problem.a_ineq.mul_t_vec(z);
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let scale = 1f64
        .max(inf(&hx))
        .max(inf(&problem.f))
        .max(inf(&aty))
        .max(inf(&atz));
    let grad: Vec<f64> = (0..x.len())
        .map(|i| hx[i] + problem.f[i] + aty[i] + atz[i])
        .collect();
    let stationarity = inf(&grad) / scale;

    let complementarity = z
        .iter()
        .zip(ax_in.iter().zip(&problem.b_ineq))
        .map(|(zi, (a, b))| (zi * (b - a)).abs())
        .fold(0.0, f64::max)
        / objective.abs().max(1.0);

    KktResiduals {
        primal_eq,
        primal_ineq,
        stationarity,
        complementarity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::TripletBuilder;

    fn dense(rows: usize, cols: usize, vals: &[f64]) -> SparseMatrix {
        let mut b = TripletBuilder::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                b.push(r, c, vals[r * cols + c]);
            }
        }
        b.build()
    }

    fn problem(h: SparseMatrix, f: Vec<f64>) -> QpProblem {
        let n = f.len();
        QpProblem {
            h,
            f,
            constant: 0.0,
            a_eq: SparseMatrix::zeros(0, n),
            b_eq: vec![],
            a_ineq: SparseMatrix::zeros(0, n),
            b_ineq: vec![],
            layout: None,
            residuals: None,
        }
    }

    #[test]
    fn unconstrained_scalar() {
        let qp = problem(dense(1, 1, &[1.0]), vec![1.0]);
        let (x, rep) = solve_qp(&qp, &SolveSettings::default()).unwrap();
        assert!((x[0] + 1.0).abs() < 1e-8);
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert!((rep.objective + 0.5).abs() < 1e-8);
    }

    #[test]
    fn equality_constrained_pair() {
        let mut qp = problem(dense(2, 2, &[1.0, 0.0, 0.0, 1.0]), vec![0.0, 0.0]);
        qp.a_eq = dense(1, 2, &[1.0, 1.0]);
        qp.b_eq = vec![2.0];
        let (x, rep) = solve_qp(&qp, &SolveSettings::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8 && (x[1] - 1.0).abs() < 1e-8);
        assert_eq!(rep.status, SolveStatus::Optimal);
    }

    #[test]
    fn active_lower_bound() {
        let mut qp = problem(dense(1, 1, &[1.0]), vec![0.0]);
        qp.a_ineq = dense(1, 1, &[-1.0]);
        qp.b_ineq = vec![-1.0];
        let (x, rep) = solve_qp(&qp, &SolveSettings::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8);
        assert_eq!(rep.kkt_residuals.primal_ineq, 0.0);
        assert_eq!(rep.status, SolveStatus::Optimal);
    }

    #[test]
    fn active_bound_multiplier_is_one() {
        // Recover z from stationarity: x - z = 0 at x = 1.
        let mut qp = problem(dense(1, 1, &[1.0]), vec![0.0]);
        qp.a_ineq = dense(1, 1, &[-1.0]);
        qp.b_ineq = vec![-1.0];
        let p = to_csc(&qp.h.upper_triangle());
        let a = to_csc(&qp.a_ineq);
        let s = DefaultSettingsBuilder::default().verbose(false).build().unwrap();
        let mut solver = DefaultSolver::new(
            &p,
            &qp.f,
            &a,
            &qp.b_ineq,
            &[SupportedConeT::NonnegativeConeT(1)],
            s,
        )
        .unwrap();
        solver.solve();
        assert!((solver.solution.z[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_box() {
        let mut qp = problem(dense(1, 1, &[1.0]), vec![0.0]);
        qp.a_ineq = dense(2, 1, &[1.0, -1.0]);
        qp.b_ineq = vec![-1.0, -1.0]; // x <= -1 and x >= 1
        let (_, rep) = solve_qp(&qp, &SolveSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Infeasible);
    }

    #[test]
    fn iteration_cap() {
        let mut qp = problem(dense(2, 2, &[2.0, 0.5, 0.5, 1.0]), vec![1.0, -3.0]);
        qp.a_ineq = dense(2, 2, &[1.0, 1.0, -1.0, 2.0]);
        qp.b_ineq = vec![0.5, 0.2];
        let settings = SolveSettings {
            max_iter: 1,
            ..SolveSettings::default()
        };
        let (x, rep) = solve_qp(&qp, &settings).unwrap();
        assert_eq!(rep.status, SolveStatus::MaxIter);
        assert_eq!(x.len(), 2);
    }

    #[test]
    fn shape_mismatch() {
        let mut qp = problem(dense(1, 1, &[1.0]), vec![0.0]);
        qp.b_eq = vec![1.0];
        assert!(matches!(
            solve_qp(&qp, &SolveSettings::default()),
            Err(Error::Shape { .. })
        ));
    }
}
