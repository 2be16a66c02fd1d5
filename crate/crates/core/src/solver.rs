//! Bound-constrained nonlinear least squares.
//!
//! Levenberg-Marquardt steps inside an explicit trust region, with bounds
//! handled by reflecting/clipping trial points back into a strict interior.
//! Accepted costs are non-increasing by construction. The multi-start driver
//! runs several seeded initializations and keeps the lowest final cost.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::{self, NetworkParams};
use crate::seeds::derive_seed;

/// Termination and multi-start controls.
#[derive(Debug, Clone, Serialize)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    /// Stop once an accepted step improves the cost by no more than
    /// `cost_tol * (1 + cost)`. Besides saving work, this halts the
    /// sum-to-one fits at their structured plateau before the slow drift
    /// into the saturated near-constant family that also zeroes the
    /// residual.
    pub cost_tol: f64,
    pub initial_trust_radius: f64,
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iterations: 500,
            gradient_tol: 1e-8,
            step_tol: 1e-10,
            cost_tol: 1e-7,
            initial_trust_radius: 1.0,
            n_starts: 5,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tol > 0.0
            && self.step_tol > 0.0
            && self.cost_tol > 0.0
            && self.initial_trust_radius > 0.0)
        {
            return Err(Error::Parameter("tolerances must be positive".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::Parameter("need at least one start".into()));
        }
        Ok(())
    }
}

/// A residual system r(x) with Jacobian, minimized as ||r(x)||^2.
pub trait BoundedNlsProblem: Sync {
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn residual_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

/// Adapter for closure-defined problems.
pub struct FnProblem<R, J>
where
    R: Fn(&DVector<f64>) -> DVector<f64> + Sync,
    J: Fn(&DVector<f64>) -> DMatrix<f64> + Sync,
{
    pub residual: R,
    pub jacobian: J,
}

impl<R, J> BoundedNlsProblem for FnProblem<R, J>
where
    R: Fn(&DVector<f64>) -> DVector<f64> + Sync,
    J: Fn(&DVector<f64>) -> DMatrix<f64> + Sync,
{
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.residual)(x))
    }

    fn residual_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok(((self.residual)(x), (self.jacobian)(x)))
    }
}

/// Result of a single bounded solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    /// ||r(x)||^2 at the returned point.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost at the initial point followed by every accepted iterate.
    pub cost_trace: Vec<f64>,
}

/// Result of the multi-start fit of the sum-to-one network.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub params: NetworkParams,
    /// Mean-squared sum-to-one residual (the 1/N-scaled objective).
    pub final_cost: f64,
    pub iterations: usize,
    pub start_index: usize,
    pub converged: bool,
    pub per_start_costs: Vec<f64>,
}

/// Initial tanh slopes relative to the data range: unit arguments stay well
/// inside the linear regime of tanh.
const BETA_INIT_SCALE: f64 = 0.5;

fn interior_margin(bound: f64) -> f64 {
    1e-12 * (1.0 + bound.abs())
}

/// Reflect a trial point at violated bounds, then clamp into the strict
/// interior.
fn reflect_clip(x: &mut DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) {
    for i in 0..x.len() {
        let (l, u) = (lower[i], upper[i]);
        let mut v = x[i];
        if l.is_finite() && v < l {
            v = 2.0 * l - v;
        }
        if u.is_finite() && v > u {
            v = 2.0 * u - v;
        }
        let lo = if l.is_finite() { l + interior_margin(l) } else { f64::NEG_INFINITY };
        let hi = if u.is_finite() { u - interior_margin(u) } else { f64::INFINITY };
        if lo > hi {
            v = 0.5 * (l + u);
        } else {
            v = v.clamp(lo, hi);
        }
        x[i] = v;
    }
}

/// Infinity norm of the gradient projected onto the feasible directions.
fn projected_gradient_norm(
    g: &DVector<f64>,
    x: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> f64 {
    let mut norm = 0.0f64;
    for i in 0..x.len() {
        let at_lower = lower[i].is_finite() && x[i] - lower[i] <= 2.0 * interior_margin(lower[i]);
        let at_upper = upper[i].is_finite() && upper[i] - x[i] <= 2.0 * interior_margin(upper[i]);
        let pg = if at_lower {
            g[i].min(0.0)
        } else if at_upper {
            g[i].max(0.0)
        } else {
            g[i]
        };
        norm = norm.max(pg.abs());
    }
    norm
}

/// Solve the damped normal equations with Marquardt scaling,
/// (J^T J + lambda * diag(J^T J)) step = -g; damping each direction
/// relative to its own curvature keeps weak columns usable.
fn damped_step(
    jtj: &DMatrix<f64>,
    g: &DVector<f64>,
    lambda: f64,
    scale: f64,
) -> Option<DVector<f64>> {
    let p = jtj.nrows();
    let mut sys = jtj.clone();
    for i in 0..p {
        sys[(i, i)] += lambda * (jtj[(i, i)] + 1e-10 * scale);
    }
    sys.cholesky().map(|ch| ch.solve(&(-g)))
}

/// Minimize ||r(x)||^2 subject to `lower <= x <= upper`.
///
/// The start must be feasible and have a finite residual. Iterates stay
/// strictly inside the bounds; the returned cost never exceeds the cost at
/// `x0`. Termination: projected gradient below `gradient_tol`, step below
/// `step_tol * (step_tol + ||x||)`, or the iteration cap (reported via
/// `converged = false`).
pub fn solve_bounded_nls(
    problem: &dyn BoundedNlsProblem,
    x0: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<Solution> {
    opts.validate()?;
    let p = x0.len();
    if lower.len() != p || upper.len() != p {
        return Err(Error::Dimension("bounds must match the variable count".into()));
    }
    for i in 0..p {
        if !(lower[i] <= x0[i] && x0[i] <= upper[i]) {
            return Err(Error::Input(format!(
                "infeasible start: x0[{i}] = {} outside [{}, {}]",
                x0[i], lower[i], upper[i]
            )));
        }
    }

    let mut x = x0.clone();
    reflect_clip(&mut x, lower, upper);

    let (mut r, mut jac) = problem.residual_and_jacobian(&x)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("residual is not finite at the start".into()));
    }
    let mut cost = r.norm_squared();
    let mut cost_trace = vec![cost];

    let mut delta = opts.initial_trust_radius;
    let mut lambda = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut bad_steps_in_a_row = 0usize;

    while iterations < opts.max_iterations {
        iterations += 1;

        let g = jac.transpose() * &r;
        if projected_gradient_norm(&g, &x, lower, upper) <= opts.gradient_tol {
            converged = true;
            break;
        }

        let jtj = jac.transpose() * &jac;
        let mut diag_scale = jtj.diagonal().sum() / p as f64;
        if !(diag_scale > 0.0) || !diag_scale.is_finite() {
            diag_scale = 1.0;
        }

        // Damped step, escalating lambda until it fits the trust region.
        let mut lam = lambda;
        let step = loop {
            match damped_step(&jtj, &g, lam, diag_scale) {
                Some(s) if s.norm() <= delta && s.iter().all(|v| v.is_finite()) => break Some(s),
                _ => {
                    lam = if lam == 0.0 { 1e-6 } else { lam * 3.0 };
                    if lam > 1e18 {
                        break None;
                    }
                }
            }
        };
        let Some(step) = step else {
            // The model cannot produce a finite step; the gradient test above
            // did not fire, so report rather than spin.
            return Err(Error::Numerical(format!(
                "no usable step at iteration {iterations} (cost {cost:.6e})"
            )));
        };

        let mut candidate = &x + &step;
        reflect_clip(&mut candidate, lower, upper);
        let actual_step = &candidate - &x;
        let step_norm = actual_step.norm();

        let predicted = cost - (&r + &jac * &actual_step).norm_squared();
        let r_cand = problem.residual(&candidate)?;
        let finite = r_cand.iter().all(|v| v.is_finite());
        let cost_cand = if finite { r_cand.norm_squared() } else { f64::INFINITY };
        let actual = cost - cost_cand;

        let ratio = if predicted > 0.0 && finite {
            actual / predicted
        } else {
            -1.0
        };

        if actual > 0.0 && finite {
            x = candidate;
            let updated = problem.residual_and_jacobian(&x)?;
            r = updated.0;
            jac = updated.1;
            let improvement = cost - cost_cand;
            cost = cost_cand;
            cost_trace.push(cost);
            lambda *= 0.25;
            bad_steps_in_a_row = 0;
            if improvement <= opts.cost_tol * (1.0 + cost) {
                converged = true;
                break;
            }
        } else {
            lambda = if lambda == 0.0 { 1e-6 } else { lambda * 4.0 };
            bad_steps_in_a_row += 1;
            if bad_steps_in_a_row > 60 {
                if finite {
                    // Fully stalled: no direction improves at this scale.
                    converged = true;
                    break;
                }
                return Err(Error::Numerical(format!(
                    "residual stayed non-finite near iteration {iterations} (cost {cost:.6e})"
                )));
            }
        }

        if ratio < 0.25 {
            delta *= 0.25;
        } else if ratio > 0.75 {
            delta = (2.0 * delta).min(1e12);
        }

        if step_norm <= opts.step_tol * (opts.step_tol + x.norm()) {
            converged = true;
            break;
        }
    }

    Ok(Solution {
        x,
        cost,
        iterations,
        converged,
        cost_trace,
    })
}

/// Relative weight of the span-anchor residual during fitting.
const SPAN_ESCORT_WEIGHT: f64 = 0.1;

/// The sum-to-one regression extended with one escort residual.
///
/// The plain criterion admits a degenerate descent ray: scale every function
/// toward a constant and absorb the mean into the intercepts, which zeroes
/// the residual without ever inverting the distortion (the family contains
/// near-constants because the positivity bounds only keep slopes nonzero,
/// not sizeable). One extra low-weight residual anchoring the total output
/// span at its initial value blocks exactly that ray; at a solution the
/// escort is inactive up to the approximation floor and only pins the global
/// scale that the recovery is invariant to anyway.
struct NetProblem<'a> {
    x: &'a DMatrix<f64>,
    k: usize,
    shared: bool,
    scale: f64,
    /// Per parameter block: the data interval its span is measured on.
    block_ranges: Vec<(f64, f64)>,
    /// Total span at the starting point.
    span_anchor: f64,
}

impl NetProblem<'_> {
    fn total_span(&self, params: &NetworkParams) -> f64 {
        self.block_ranges
            .iter()
            .enumerate()
            .map(|(b, &(lo, hi))| params.forward(hi, b) - params.forward(lo, b))
            .sum()
    }

    fn escort_residual(&self, params: &NetworkParams) -> f64 {
        SPAN_ESCORT_WEIGHT * (self.span_anchor - self.total_span(params)) / self.span_anchor
    }
}

impl BoundedNlsProblem for NetProblem<'_> {
    fn residual(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let params = NetworkParams::unpack(theta, self.k, self.shared, self.x.nrows())?;
        let data = net::sum_residual(&params, self.x)? * self.scale;
        let mut r = data.insert_row(self.x.ncols(), 0.0);
        r[self.x.ncols()] = self.escort_residual(&params);
        Ok(r)
    }

    fn residual_and_jacobian(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let params = NetworkParams::unpack(theta, self.k, self.shared, self.x.nrows())?;
        let (data_r, data_j) = net::residual_and_jacobian(&params, self.x)?;
        let n = self.x.ncols();
        let p = theta.len();
        let mut r = (data_r * self.scale).insert_row(n, 0.0);
        r[n] = self.escort_residual(&params);

        let mut jac = (data_j * self.scale).insert_row(n, 0.0);
        let w = -SPAN_ESCORT_WEIGHT / self.span_anchor;
        let k = self.k;
        for (b, &(lo, hi)) in self.block_ranges.iter().enumerate() {
            let f = &params.features[b];
            for q in 0..k {
                let t_hi = (f.beta[q] * hi + f.gamma[q]).tanh();
                let t_lo = (f.beta[q] * lo + f.gamma[q]).tanh();
                let s_hi = 1.0 - t_hi * t_hi;
                let s_lo = 1.0 - t_lo * t_lo;
                let base = b * 4 * k;
                jac[(n, base + q)] = w * (t_hi - t_lo);
                jac[(n, base + k + q)] = w * f.alpha[q] * (hi * s_hi - lo * s_lo);
                jac[(n, base + 2 * k + q)] = w * f.alpha[q] * (s_hi - s_lo);
            }
        }
        Ok((r, jac))
    }
}

/// Seeded initialization. Each function starts as a staircase of overlapping
/// tanh ramps whose knots are jittered across the feature's observed data
/// range, with output span of order one and value 1/M at the mid-range point
/// so the column sums start near one. Starting with genuine slope keeps the
/// solver in the basin of shape-fitting solutions instead of the flat
/// constant family that also satisfies the sum criterion.
fn initial_params(x: &DMatrix<f64>, k: usize, shared: bool, seed: u64) -> NetworkParams {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = x.nrows();
    let kf = k as f64;

    let row_range = |i: usize| -> (f64, f64) {
        let row = x.row(i);
        (row.min(), row.max())
    };
    let global_range = {
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };

    let blocks = if shared { 1 } else { m };
    let features = (0..blocks)
        .map(|b| {
            let (lo, hi) = if shared { global_range } else { row_range(b) };
            let range = if hi > lo { hi - lo } else { 1.0 };

            // Shallow, barely-saturated units: the slope budget sits in
            // alpha, so erasing it is a large parameter move while bending
            // the function is a cheap one.
            let beta: Vec<f64> = (0..k)
                .map(|_| (0.5 + rng.random::<f64>()) * BETA_INIT_SCALE / range)
                .collect();
            // Unit output span for every feature: equal initial slopes keep
            // the starting residual free of slope-imbalance terms, which the
            // solver would otherwise zero out by flattening everything.
            let alpha: Vec<f64> = (0..k).map(|q| 1.0 / (kf * beta[q] * range)).collect();
            let gamma: Vec<f64> = (0..k)
                .map(|q| {
                    let knot = lo + range * (q as f64 + rng.random::<f64>()) / kf;
                    -beta[q] * knot
                })
                .collect();

            // Center the output at 1/M on the mid-range input.
            let mid = 0.5 * (lo + hi);
            let tanh_mid: f64 = (0..k)
                .map(|q| alpha[q] * (beta[q] * mid + gamma[q]).tanh())
                .sum();
            let delta = vec![(1.0 / m as f64 - tanh_mid) / kf; k];

            net::FeatureParams {
                alpha,
                beta,
                gamma,
                delta,
            }
        })
        .collect();
    NetworkParams { k, shared, features }
}

/// Fit the sum-to-one network to `x` by running `opts.n_starts` independent
/// seeded solves of the mean-squared residual objective and keeping the
/// smallest final cost.
pub fn fit_nonlinearity(
    x: &DMatrix<f64>,
    k: usize,
    shared: bool,
    opts: &SolveOptions,
) -> Result<FitResult> {
    opts.validate()?;
    if k == 0 {
        return Err(Error::Parameter("need at least one neuron".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("data matrix contains non-finite entries".into()));
    }
    let n = x.ncols();
    if n == 0 || x.nrows() == 0 {
        return Err(Error::Input("data matrix is empty".into()));
    }

    let block_ranges: Vec<(f64, f64)> = if shared {
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        vec![(lo, hi)]
    } else {
        (0..x.nrows())
            .map(|i| {
                let row = x.row(i);
                (row.min(), row.max())
            })
            .collect()
    };

    // The criterion value itself: the mean-squared sum-to-one residual.
    let criterion_cost = |theta: &DVector<f64>| -> Result<f64> {
        let params = NetworkParams::unpack(theta, k, shared, x.nrows())?;
        Ok(net::sum_residual(&params, x)?.norm_squared() / n as f64)
    };

    let runs: Vec<(usize, Result<Solution>)> = (0..opts.n_starts)
        .into_par_iter()
        .map(|start| {
            let init = initial_params(x, k, shared, derive_seed(opts.seed, start as u64));
            let theta0 = init.pack();
            let (lower, upper) = init.bounds();
            let problem = NetProblem {
                x,
                k,
                shared,
                scale: 1.0 / (n as f64).sqrt(),
                block_ranges: block_ranges.clone(),
                span_anchor: 0.0,
            };
            let anchor = problem.total_span(&init).max(1e-3);
            let problem = NetProblem {
                span_anchor: anchor,
                ..problem
            };
            (
                start,
                solve_bounded_nls(&problem, &theta0, &lower, &upper, opts),
            )
        })
        .collect();

    let mut per_start_costs = vec![f64::INFINITY; opts.n_starts];
    let mut best: Option<(usize, Solution, f64)> = None;
    let mut failures = Vec::new();
    for (start, outcome) in runs {
        match outcome {
            Ok(sol) => {
                let cost = criterion_cost(&sol.x)?;
                per_start_costs[start] = cost;
                let better = match &best {
                    None => true,
                    Some((_, _, b)) => cost < *b,
                };
                if better {
                    best = Some((start, sol, cost));
                }
            }
            Err(e) => failures.push(format!("start {start}: {e}")),
        }
    }

    let Some((start_index, sol, cost)) = best else {
        return Err(Error::SolverFailure(failures.join("; ")));
    };
    let params = NetworkParams::unpack(&sol.x, k, shared, x.nrows())?;
    params.validate()?;
    Ok(FitResult {
        params,
        final_cost: cost,
        iterations: sol.iterations,
        start_index,
        converged: sol.converged,
        per_start_costs,
    })
}
