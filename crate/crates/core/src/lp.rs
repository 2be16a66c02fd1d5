//! Small dense linear-programming subsolver.
//!
//! Two-phase revised simplex for standard-form problems
//! `min c^T x  s.t.  A x = b, x >= 0` with few rows and many columns.
//! Pricing is Dantzig's rule, switching to Bland's rule after a run of
//! degenerate pivots so cycling cannot occur. The basis inverse is recomputed
//! every iteration; the row counts here are tiny, the column counts are not.
//!
//! `maximize_under_inequalities` solves `max c^T x  s.t.  A x <= b` with free
//! variables by running the simplex on its standard-form dual and reading the
//! primal point off the optimal basis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_RUN_LIMIT: usize = 30;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub basis: Vec<usize>,
}

enum StopReason {
    Optimal,
    Unbounded,
}

struct Simplex<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    costs: DVector<f64>,
    basis: Vec<usize>,
    /// Columns at and past this index may never enter the basis (artificials).
    enter_limit: usize,
    bland: bool,
}

impl Simplex<'_> {
    fn run(&mut self, max_iterations: usize) -> Result<(StopReason, DVector<f64>, f64)> {
        let m = self.a.nrows();
        let cost_tol = PIVOT_TOL * (1.0 + self.costs.amax());
        let mut degenerate_run = 0usize;

        for _ in 0..max_iterations {
            let basis_mat = DMatrix::from_fn(m, m, |i, j| self.a[(i, self.basis[j])]);
            let Some(b_inv) = basis_mat.try_inverse() else {
                return Err(Error::Numerical("singular simplex basis".into()));
            };
            let x_b = &b_inv * self.b;
            let c_b = DVector::from_fn(m, |i, _| self.costs[self.basis[i]]);
            let y = b_inv.transpose() * c_b;

            // Price nonbasic columns.
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.enter_limit {
                if self.basis.contains(&j) {
                    continue;
                }
                let reduced = self.costs[j] - self.a.column(j).dot(&y);
                if reduced < -cost_tol {
                    if self.bland {
                        entering = Some((j, reduced));
                        break;
                    }
                    match entering {
                        Some((_, best)) if reduced >= best => {}
                        _ => entering = Some((j, reduced)),
                    }
                }
            }
            let Some((enter, _)) = entering else {
                let obj = (0..m).map(|i| self.costs[self.basis[i]] * x_b[i]).sum();
                return Ok((StopReason::Optimal, x_b, obj));
            };

            let w = &b_inv * self.a.column(enter);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if w[i] > PIVOT_TOL {
                    let ratio = x_b[i].max(0.0) / w[i];
                    let replace = match leave {
                        None => true,
                        Some((cur, best)) => {
                            ratio < best - PIVOT_TOL
                                || (ratio < best + PIVOT_TOL
                                    && self.basis[i] < self.basis[cur])
                        }
                    };
                    if replace {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((leave_row, theta)) = leave else {
                return Ok((StopReason::Unbounded, x_b, f64::NEG_INFINITY));
            };

            if theta <= PIVOT_TOL {
                degenerate_run += 1;
                if degenerate_run > DEGENERATE_RUN_LIMIT {
                    self.bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.basis[leave_row] = enter;
        }
        Err(Error::Numerical("simplex iteration limit reached".into()))
    }
}

/// Minimize `c^T x` subject to `A x = b`, `x >= 0`.
pub fn solve_standard_form(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<LpSolution> {
    let (m, n) = a.shape();
    if c.len() != n || b.len() != m {
        return Err(Error::Dimension("LP shapes do not conform".into()));
    }
    if m == 0 {
        return Err(Error::Input("LP needs at least one constraint".into()));
    }

    // Orient rows so the artificial start is feasible.
    let mut a_work = a.clone();
    let mut b_work = b.clone();
    for i in 0..m {
        if b_work[i] < 0.0 {
            b_work[i] = -b_work[i];
            for j in 0..n {
                a_work[(i, j)] = -a_work[(i, j)];
            }
        }
    }

    // Phase 1: append artificial identity columns and drive their sum to zero.
    let mut a_ext = DMatrix::zeros(m, n + m);
    a_ext.view_mut((0, 0), (m, n)).copy_from(&a_work);
    for i in 0..m {
        a_ext[(i, n + i)] = 1.0;
    }
    let mut phase1_costs = DVector::zeros(n + m);
    for i in 0..m {
        phase1_costs[n + i] = 1.0;
    }
    let mut state = Simplex {
        a: &a_ext,
        b: &b_work,
        costs: phase1_costs,
        basis: (n..n + m).collect(),
        enter_limit: n + m,
        bland: false,
    };
    let max_iter = 200 * (n + m + 1);
    let (stop, _, obj) = state.run(max_iter)?;
    if matches!(stop, StopReason::Unbounded) {
        return Err(Error::Numerical("phase-1 LP is unbounded".into()));
    }
    let feas_tol = PIVOT_TOL * (1.0 + b_work.amax());
    if obj > feas_tol {
        return Err(Error::Numerical(format!(
            "LP infeasible: phase-1 objective {obj:.3e}"
        )));
    }

    // Pivot leftover artificials out of the basis where possible; rows that
    // cannot be pivoted are redundant and get dropped.
    let mut basis = state.basis;
    let mut keep_rows: Vec<usize> = (0..m).collect();
    loop {
        let Some(pos) = basis.iter().position(|&j| j >= n) else {
            break;
        };
        let rows = keep_rows.len();
        let basis_mat = DMatrix::from_fn(rows, rows, |i, j| a_ext[(keep_rows[i], basis[j])]);
        let Some(b_inv) = basis_mat.try_inverse() else {
            return Err(Error::Numerical("singular basis after phase 1".into()));
        };
        let mut replaced = false;
        for j in 0..n {
            if basis.contains(&j) {
                continue;
            }
            let col = DVector::from_fn(rows, |i, _| a_ext[(keep_rows[i], j)]);
            let w = &b_inv * col;
            if w[pos].abs() > 1e-7 {
                basis[pos] = j;
                replaced = true;
                break;
            }
        }
        if !replaced {
            keep_rows.remove(pos);
            basis.remove(pos);
            if keep_rows.is_empty() {
                return Err(Error::Numerical("all LP rows were redundant".into()));
            }
        }
    }

    let rows = keep_rows.len();
    let a_red = DMatrix::from_fn(rows, n, |i, j| a_work[(keep_rows[i], j)]);
    let b_red = DVector::from_fn(rows, |i, _| b_work[keep_rows[i]]);

    // Phase 2 on the original objective.
    let mut state = Simplex {
        a: &a_red,
        b: &b_red,
        costs: c.clone(),
        basis,
        enter_limit: n,
        bland: false,
    };
    let (stop, x_b, obj) = state.run(max_iter)?;
    if matches!(stop, StopReason::Unbounded) {
        return Err(Error::Numerical("LP is unbounded".into()));
    }

    let mut x = DVector::zeros(n);
    for (i, &j) in state.basis.iter().enumerate() {
        x[j] = x_b[i].max(0.0);
    }
    Ok(LpSolution {
        x,
        objective: obj,
        basis: state.basis,
    })
}

/// Maximize `c^T x` over free `x` subject to `A x <= b`.
///
/// Solved through the dual `min b^T y, A^T y = c, y >= 0`; the optimal basis
/// names a square subset of tight constraints from which `x` is recovered.
pub fn maximize_under_inequalities(
    c: &DVector<f64>,
    a_ub: &DMatrix<f64>,
    b_ub: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let (rows, vars) = a_ub.shape();
    if c.len() != vars || b_ub.len() != rows {
        return Err(Error::Dimension("LP shapes do not conform".into()));
    }
    if rows < vars {
        return Err(Error::Input(
            "need at least as many inequalities as variables".into(),
        ));
    }

    let dual = solve_standard_form(b_ub, &a_ub.transpose(), c).map_err(|e| {
        Error::Numerical(format!("inequality LP failed via its dual: {e}"))
    })?;

    // Tight rows named by the dual basis give a square system for x.
    let k = dual.basis.len();
    let tight = DMatrix::from_fn(k, vars, |i, j| a_ub[(dual.basis[i], j)]);
    let rhs = DVector::from_fn(k, |i, _| b_ub[dual.basis[i]]);
    let x = tight
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Numerical(format!("tight-row solve failed: {e}")))?;

    let slack_tol = 1e-7 * (1.0 + b_ub.amax());
    let violation = (a_ub * &x - b_ub).max();
    if violation > slack_tol {
        return Err(Error::Numerical(format!(
            "recovered LP point violates a constraint by {violation:.3e}"
        )));
    }
    let objective = c.dot(&x);
    if (objective - dual.objective).abs() > 1e-6 * (1.0 + dual.objective.abs()) {
        return Err(Error::Numerical(format!(
            "duality gap {:.3e} at the recovered point",
            (objective - dual.objective).abs()
        )));
    }
    Ok((x, objective))
}
