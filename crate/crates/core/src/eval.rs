//! Quantitative diagnostics.
//!
//! Permutation-aligned mean squared error resolves the row-permutation
//! ambiguity of simplex factorizations; empirical CDFs summarize trial
//! sweeps; the composite-affinity check measures how close the learned
//! function composed with the generating nonlinearity is to an affine map,
//! and derives the induced linear transform where defined.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::NetworkParams;
use crate::nonlinear::NonlinearSpec;

/// Above this row count the permutation search switches from brute force to
/// the assignment solver; both are exact.
const BRUTE_FORCE_LIMIT: usize = 8;

/// Per-feature affine fits of the composites k_i = f_i . phi_i.
#[derive(Debug, Clone, Serialize)]
pub struct AffineCompositeFit {
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub r_squared: Vec<f64>,
    /// Largest absolute deviation from the affine fit over all features.
    pub max_deviation: f64,
    /// Induced linear map (I + b 1^T / (1 - 1^T b)) diag(slopes); undefined
    /// when 1^T b is numerically one.
    #[serde(skip)]
    pub w: Option<DMatrix<f64>>,
    pub w_defined: bool,
}

/// Minimum over row permutations P of ||P S_hat - S||_F^2 / (r N), together
/// with the minimizing permutation: row k of the aligned estimate is
/// `s_hat` row `perm[k]`.
pub fn aligned_mse(s_hat: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<(f64, Vec<usize>)> {
    if s_hat.shape() != s.shape() {
        return Err(Error::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            s_hat.shape(),
            s.shape()
        )));
    }
    let (r, n) = s.shape();
    if r == 0 || n == 0 {
        return Err(Error::Input("empty matrices".into()));
    }

    // cost[k][l]: squared error of matching estimate row k to truth row l.
    let mut cost = DMatrix::zeros(r, r);
    for k in 0..r {
        for l in 0..r {
            cost[(k, l)] = (s_hat.row(k) - s.row(l)).norm_squared();
        }
    }

    let assignment = if r <= BRUTE_FORCE_LIMIT {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for perm in (0..r).permutations(r) {
            let total: f64 = perm.iter().enumerate().map(|(l, &k)| cost[(k, l)]).sum();
            if best.as_ref().is_none_or(|(b, _)| total < *b) {
                best = Some((total, perm));
            }
        }
        best.unwrap().1
    } else {
        hungarian_min_assignment(&cost)
    };

    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(l, &k)| cost[(k, l)])
        .sum();
    Ok((total / (r as f64 * n as f64), assignment))
}

/// Exact minimum-cost assignment on a square cost matrix (O(n^3) potentials
/// method). Returns `perm` with `perm[col] = row`.
pub fn hungarian_min_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    // 1-indexed potentials over rows (u) and columns (v); way[j] remembers
    // the column from which column j was reached.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row assigned to column j
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[j - 1] = p[j] - 1;
    }
    perm
}

/// Sorted (value, rank/n) pairs of the empirical distribution.
pub fn empirical_cdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::Input("empirical CDF of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect())
}

/// Sample each composite k_i(t) = f_i(phi_i(t)) on its feature's interval,
/// fit the best affine function by least squares, and report fit quality.
pub fn composite_affinity(
    params: &NetworkParams,
    phi: &NonlinearSpec,
    domains: &[(f64, f64)],
    n_samples: usize,
) -> Result<AffineCompositeFit> {
    let m = phi.len();
    if domains.len() != m {
        return Err(Error::Dimension(format!(
            "{} intervals for {m} features",
            domains.len()
        )));
    }
    if n_samples < 10 {
        return Err(Error::Parameter("need at least 10 sample points".into()));
    }

    let mut slopes = Vec::with_capacity(m);
    let mut intercepts = Vec::with_capacity(m);
    let mut r_squared = Vec::with_capacity(m);
    let mut max_deviation = 0.0f64;

    for i in 0..m {
        let (lo, hi) = domains[i];
        let kind = phi.kind(i);
        if !(lo < hi) || !kind.contains(lo) || !kind.contains(hi) {
            return Err(Error::Domain {
                feature: i,
                message: format!("interval [{lo}, {hi}] leaves the domain of {kind:?}"),
            });
        }

        let mut ts = Vec::with_capacity(n_samples);
        let mut ks = Vec::with_capacity(n_samples);
        for q in 0..n_samples {
            let t = lo + (hi - lo) * q as f64 / (n_samples - 1) as f64;
            ts.push(t);
            ks.push(params.forward(kind.eval(t), i));
        }

        let nf = n_samples as f64;
        let t_mean = ts.iter().sum::<f64>() / nf;
        let k_mean = ks.iter().sum::<f64>() / nf;
        let mut stt = 0.0;
        let mut stk = 0.0;
        let mut skk = 0.0;
        for q in 0..n_samples {
            let dt = ts[q] - t_mean;
            let dk = ks[q] - k_mean;
            stt += dt * dt;
            stk += dt * dk;
            skk += dk * dk;
        }
        let slope = if stt > 0.0 { stk / stt } else { 0.0 };
        let intercept = k_mean - slope * t_mean;

        let mut ss_res = 0.0;
        let mut dev = 0.0f64;
        for q in 0..n_samples {
            let e = ks[q] - (slope * ts[q] + intercept);
            ss_res += e * e;
            dev = dev.max(e.abs());
        }
        // A (near-)constant composite is exactly affine with zero slope.
        let r2 = if skk <= 1e-30 {
            if ss_res <= 1e-30 {
                1.0
            } else {
                0.0
            }
        } else {
            (1.0 - ss_res / skk).clamp(0.0, 1.0)
        };

        slopes.push(slope);
        intercepts.push(intercept);
        r_squared.push(r2);
        max_deviation = max_deviation.max(dev);
    }

    let ones_dot_b: f64 = intercepts.iter().sum();
    let (w, w_defined) = if (1.0 - ones_dot_b).abs() > 1e-8 {
        let d = DMatrix::from_diagonal(&DVector::from_vec(slopes.clone()));
        let bvec = DVector::from_vec(intercepts.clone());
        let ones = DVector::from_element(m, 1.0);
        let w = (DMatrix::identity(m, m)
            + &bvec * ones.transpose() / (1.0 - ones_dot_b))
            * d;
        (Some(w), true)
    } else {
        (None, false)
    };

    Ok(AffineCompositeFit {
        slopes,
        intercepts,
        r_squared,
        max_deviation,
        w,
        w_defined,
    })
}

/// Map simplex columns (r = 3) onto an equilateral triangle with vertices
/// (0, 0), (1, 0), and (1/2, sqrt(3)/2).
pub fn simplex_projection_2d(s: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    if s.nrows() != 3 {
        return Err(Error::Dimension(format!(
            "2D projection needs exactly 3 rows, got {}",
            s.nrows()
        )));
    }
    let verts = [(0.0, 0.0), (1.0, 0.0), (0.5, 3f64.sqrt() / 2.0)];
    Ok((0..s.ncols())
        .map(|j| {
            let mut x = 0.0;
            let mut y = 0.0;
            for (k, (vx, vy)) in verts.iter().enumerate() {
                x += s[(k, j)] * vx;
                y += s[(k, j)] * vy;
            }
            (x, y)
        })
        .collect())
}
