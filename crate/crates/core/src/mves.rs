//! Minimum-volume enclosing simplex factorization.
//!
//! The data are first reduced to their (r-1)-dimensional affine hull. The
//! inverse barycentric map (H, g) of a candidate simplex is then optimized by
//! cyclic row updates: the determinant of H is linear in one row by cofactor
//! expansion, so each update maximizes |det H| with two linear programs under
//! the enclosure constraints. Growing |det H| shrinks the simplex volume, and
//! every iterate keeps all data points inside the simplex.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::maximize_under_inequalities;

/// Result of fitting the affine hull of the data columns.
#[derive(Debug, Clone)]
pub struct ReducedData {
    /// (r-1) x N coordinates in the hull basis.
    pub z: DMatrix<f64>,
    /// Column mean of the input.
    pub mean: DVector<f64>,
    /// M x (r-1), orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Singular values of the centered data, descending.
    pub singular_values: Vec<f64>,
}

/// Controls for the alternating optimization.
#[derive(Debug, Clone)]
pub struct MvesOptions {
    pub max_outer_iterations: usize,
    /// Relative volume-change stopping threshold.
    pub volume_tol: f64,
}

impl Default for MvesOptions {
    fn default() -> Self {
        MvesOptions {
            max_outer_iterations: 200,
            volume_tol: 1e-8,
        }
    }
}

/// Vertices and simplex-constrained coefficients returned by the solver.
#[derive(Debug, Clone)]
pub struct SimplexFactorization {
    /// M x r estimated vertices.
    pub b: DMatrix<f64>,
    /// r x N coefficients: nonnegative up to LP tolerance, columns sum to one.
    pub h: DMatrix<f64>,
    /// |det| of the reduced vertex-difference matrix.
    pub volume_proxy: f64,
    /// ||Y - B H||_F / ||Y||_F.
    pub reconstruction_error: f64,
    pub converged: bool,
    /// Volume proxy after every outer iteration.
    pub volume_trace: Vec<f64>,
    /// Largest negative coefficient magnitude (0 when fully enclosed).
    pub max_enclosure_violation: f64,
}

/// Sources recovered from known vertices by a barycentric solve.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveredSources {
    #[serde(skip)]
    pub h: DMatrix<f64>,
    /// Largest simplex-constraint violation before cleanup.
    pub max_violation: f64,
    /// False when violations were too large to clip away.
    pub consistent: bool,
}

/// Fit the (r-1)-dimensional affine hull: column mean plus the top r-1 left
/// singular vectors of the centered data.
pub fn affine_fit(y: &DMatrix<f64>, r: usize) -> Result<ReducedData> {
    let (m, n) = y.shape();
    if r < 2 {
        return Err(Error::Dimension("need rank at least 2".into()));
    }
    if n < r {
        return Err(Error::Dimension(format!(
            "need at least r = {r} columns, got {n}"
        )));
    }
    if r - 1 > m {
        return Err(Error::Dimension(format!(
            "rank {r} exceeds the feature count {m}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("data matrix contains non-finite entries".into()));
    }

    let mean = DVector::from_fn(m, |i, _| y.row(i).sum() / n as f64);
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }

    let svd = centered.clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD produced no left singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());

    let mut basis = DMatrix::zeros(m, r - 1);
    for (out, &idx) in order.iter().take(r - 1).enumerate() {
        basis.column_mut(out).copy_from(&u.column(idx));
    }
    let z = basis.transpose() * &centered;
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    Ok(ReducedData {
        z,
        mean,
        basis,
        singular_values,
    })
}

/// Barycentric coordinates of every column of `z` under the map (H, g):
/// rows 1..r-1 are H z + g, the last row completes the column sums to one.
fn barycentric(hmap: &DMatrix<f64>, g: &DVector<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let d = hmap.nrows();
    let n = z.ncols();
    let mut s = DMatrix::zeros(d + 1, n);
    let top = hmap * z;
    for j in 0..n {
        let mut sum = 0.0;
        for i in 0..d {
            let v = top[(i, j)] + g[i];
            s[(i, j)] = v;
            sum += v;
        }
        s[(d, j)] = 1.0 - sum;
    }
    s
}

/// Vertices of the simplex encoded by (H, g): H maps vertex k to e_k and the
/// last vertex to the origin.
fn vertices_from_map(hmap: &DMatrix<f64>, g: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = hmap.nrows();
    let inv = hmap
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("barycentric map is singular".into()))?;
    let mut verts = DMatrix::zeros(d, d + 1);
    let last = -&inv * g;
    for k in 0..d {
        let mut e = g.clone();
        e.neg_mut();
        e[k] += 1.0;
        verts.column_mut(k).copy_from(&(&inv * e));
    }
    verts.column_mut(d).copy_from(&last);
    Ok(verts)
}

fn map_from_vertices(verts: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = verts.nrows();
    let mut diff = DMatrix::zeros(d, d);
    for k in 0..d {
        diff.column_mut(k)
            .copy_from(&(verts.column(k) - verts.column(d)));
    }
    let hmap = diff
        .try_inverse()
        .ok_or_else(|| Error::Structure("initial simplex vertices are affinely dependent".into()))?;
    let g = -&hmap * verts.column(d);
    Ok((hmap, g))
}

/// Greedy farthest-point choice of r initial vertex columns: the first is
/// farthest from the centroid, each next one is farthest from the affine
/// hull of those already chosen. Maximizing hull distance maximizes the
/// volume added per vertex, which starts the alternating scheme near a
/// large inscribed simplex.
fn farthest_point_indices(z: &DMatrix<f64>, r: usize) -> Vec<usize> {
    let n = z.ncols();
    let centroid = DVector::from_fn(z.nrows(), |i, _| z.row(i).sum() / n as f64);
    let mut chosen: Vec<usize> = Vec::with_capacity(r);
    let mut best = 0usize;
    let mut best_d = -1.0;
    for j in 0..n {
        let d = (z.column(j) - &centroid).norm_squared();
        if d > best_d {
            best_d = d;
            best = j;
        }
    }
    chosen.push(best);

    // Orthonormal directions spanning the affine hull of the chosen set.
    let mut span: Vec<DVector<f64>> = Vec::with_capacity(r - 1);
    while chosen.len() < r {
        let anchor = z.column(chosen[0]).into_owned();
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for j in 0..n {
            if chosen.contains(&j) {
                continue;
            }
            let mut residual = z.column(j) - &anchor;
            for q in &span {
                let proj = q.dot(&residual);
                residual -= q * proj;
            }
            let d = residual.norm_squared();
            if d > best_d {
                best_d = d;
                best = j;
            }
        }
        let mut dir = z.column(best) - &anchor;
        for q in &span {
            let proj = q.dot(&dir);
            dir -= q * proj;
        }
        let norm = dir.norm();
        if norm > 0.0 {
            span.push(dir / norm);
        }
        chosen.push(best);
    }
    chosen
}

fn cofactor_row(hmap: &DMatrix<f64>, row: usize) -> DVector<f64> {
    let d = hmap.nrows();
    let mut c = DVector::zeros(d);
    for k in 0..d {
        let minor = if d == 1 {
            1.0
        } else {
            let sub = DMatrix::from_fn(d - 1, d - 1, |i, j| {
                let ii = if i < row { i } else { i + 1 };
                let jj = if j < k { j } else { j + 1 };
                hmap[(ii, jj)]
            });
            sub.determinant()
        };
        c[k] = if (row + k) % 2 == 0 { minor } else { -minor };
    }
    c
}

/// Minimum-volume enclosing simplex factorization of `y` at rank `r`.
///
/// On exact linear-mixture data with sufficiently scattered sources this
/// recovers the sources up to row permutation; the volume proxy is
/// non-increasing across outer iterations. Non-convergence within the
/// iteration budget returns the best iterate with `converged = false`.
pub fn mves(y: &DMatrix<f64>, r: usize, opts: &MvesOptions) -> Result<SimplexFactorization> {
    let reduced = affine_fit(y, r)?;
    let smax = reduced.singular_values[0];
    if !(smax > 0.0) || reduced.singular_values[r - 2] <= 1e-12 * smax {
        return Err(Error::Structure(format!(
            "reduced data has affine dimension below {}",
            r - 1
        )));
    }

    let z = &reduced.z;
    let n = z.ncols();
    let d = r - 1;

    // Initial simplex: farthest-point vertices, inflated about their
    // barycenter until every point is enclosed.
    let init = farthest_point_indices(z, r);
    let mut verts = DMatrix::zeros(d, r);
    for (k, &j) in init.iter().enumerate() {
        verts.column_mut(k).copy_from(&z.column(j));
    }
    let (mut hmap, mut g) = map_from_vertices(&verts)?;
    let coords = barycentric(&hmap, &g, z);
    let min_coord = coords.min();
    let scale = (1.0 - r as f64 * min_coord.min(0.0)).max(1.0) * (1.0 + 1e-9);
    let center = DVector::from_fn(d, |i, _| verts.row(i).sum() / r as f64);
    for mut col in verts.column_iter_mut() {
        let grown = &center + (&col - &center) * scale;
        col.copy_from(&grown);
    }
    (hmap, g) = map_from_vertices(&verts)?;

    let mut det = hmap.determinant();
    if det == 0.0 {
        return Err(Error::Structure("initial simplex is degenerate".into()));
    }
    let mut volume_trace = vec![1.0 / det.abs()];
    let mut converged = false;

    for _outer in 0..opts.max_outer_iterations {
        let vol_prev = 1.0 / det.abs();
        for i in 0..d {
            let cof = cofactor_row(&hmap, i);
            if cof.amax() == 0.0 {
                continue;
            }

            // Enclosure constraints on (h_i, g_i) with the other rows fixed:
            // 0 <= h^T z_j + g and h^T z_j + g <= 1 - sum of the other rows.
            let mut a_ub = DMatrix::zeros(2 * n, d + 1);
            let mut b_ub = DVector::zeros(2 * n);
            for j in 0..n {
                let mut others = 0.0;
                for l in 0..d {
                    if l != i {
                        let mut v = g[l];
                        for q in 0..d {
                            v += hmap[(l, q)] * z[(q, j)];
                        }
                        others += v;
                    }
                }
                for q in 0..d {
                    a_ub[(2 * j, q)] = -z[(q, j)];
                    a_ub[(2 * j + 1, q)] = z[(q, j)];
                }
                a_ub[(2 * j, d)] = -1.0;
                a_ub[(2 * j + 1, d)] = 1.0;
                b_ub[2 * j] = 0.0;
                b_ub[2 * j + 1] = 1.0 - others;
            }

            let mut objective = DVector::zeros(d + 1);
            for q in 0..d {
                objective[q] = cof[q];
            }
            let (x_max, v_max) = maximize_under_inequalities(&objective, &a_ub, &b_ub)?;
            objective.neg_mut();
            let (x_min, v_min) = maximize_under_inequalities(&objective, &a_ub, &b_ub)?;
            let (x_new, new_det) = if v_max.abs() >= v_min.abs() {
                (x_max, v_max)
            } else {
                (x_min, -v_min)
            };
            if new_det.abs() >= det.abs() {
                for q in 0..d {
                    hmap[(i, q)] = x_new[q];
                }
                g[i] = x_new[d];
                det = new_det;
            }
        }

        let vol_new = 1.0 / det.abs();
        volume_trace.push(vol_new);
        if (vol_prev - vol_new).abs() <= opts.volume_tol * vol_prev {
            converged = true;
            break;
        }
    }

    let h = barycentric(&hmap, &g, z);
    let verts = vertices_from_map(&hmap, &g)?;
    let mut b = DMatrix::zeros(y.nrows(), r);
    for k in 0..r {
        let col = &reduced.mean + &reduced.basis * verts.column(k);
        b.column_mut(k).copy_from(&col);
    }

    let reconstruction_error = (y - &b * &h).norm() / y.norm();
    let max_enclosure_violation = (-h.min()).max(0.0);

    Ok(SimplexFactorization {
        b,
        h,
        volume_proxy: 1.0 / det.abs(),
        reconstruction_error,
        converged,
        volume_trace,
        max_enclosure_violation,
    })
}

/// Solve `[B; 1^T] H = [Y; 1^T]` column-wise in least squares, then clip tiny
/// negatives and renormalize when violations stay below 1e-6.
pub fn recover_sources(
    b: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reduced: &ReducedData,
) -> Result<RecoveredSources> {
    let (m, r) = b.shape();
    if y.nrows() != m {
        return Err(Error::Dimension("vertex and data row counts differ".into()));
    }

    // Precondition: the vertices must span an (r-1)-simplex; check the
    // vertex-difference matrix in the reduced coordinates.
    let mut diff = DMatrix::zeros(reduced.basis.ncols(), r - 1);
    for k in 0..r - 1 {
        let dcol = reduced.basis.transpose() * (b.column(k) - b.column(r - 1));
        diff.column_mut(k).copy_from(&dcol);
    }
    let svals = diff.singular_values();
    if svals.len() < r - 1 || svals.min() <= 1e-12 * svals.max() {
        return Err(Error::Structure(
            "vertex-difference matrix is singular".into(),
        ));
    }

    let mut stacked = DMatrix::zeros(m + 1, r);
    stacked.view_mut((0, 0), (m, r)).copy_from(b);
    stacked.row_mut(m).fill(1.0);
    let mut rhs = DMatrix::zeros(m + 1, y.ncols());
    rhs.view_mut((0, 0), (m, y.ncols())).copy_from(y);
    rhs.row_mut(m).fill(1.0);

    let mut h = stacked
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numerical(format!("barycentric solve failed: {e}")))?;

    let mut max_violation = 0.0f64;
    for j in 0..h.ncols() {
        let col = h.column(j);
        max_violation = max_violation.max(-col.min());
        max_violation = max_violation.max((col.sum() - 1.0).abs());
    }

    let consistent = max_violation <= 1e-6;
    if consistent {
        for j in 0..h.ncols() {
            let mut col = h.column_mut(j);
            for v in col.iter_mut() {
                *v = v.max(0.0);
            }
            let s = col.sum();
            if s > 0.0 {
                col /= s;
            }
        }
    }

    Ok(RecoveredSources {
        h,
        max_violation,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::aligned_mse;
    use crate::model::{generate_mixing_matrix, sample_dirichlet};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sources with all r coordinate columns present plus Dirichlet interior
    /// points; the pure columns make the true simplex the unique minimal one.
    fn pure_pixel_sources(r: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let src = sample_dirichlet(&vec![1.0; r], n, seed).unwrap();
        let mut s = DMatrix::zeros(r, n + r);
        s.view_mut((0, 0), (r, n)).copy_from(&src.s);
        for k in 0..r {
            s[(k, n + k)] = 1.0;
        }
        s
    }

    #[test]
    fn affine_fit_reconstructs_exact_low_rank_data() {
        let mix = generate_mixing_matrix(8, 4, 1).unwrap();
        let src = sample_dirichlet(&[1.0; 4], 50, 1).unwrap();
        let y = &mix.a * &src.s;
        let red = affine_fit(&y, 4).unwrap();
        let recon = {
            let mut m = &red.basis * &red.z;
            for mut c in m.column_iter_mut() {
                c += &red.mean;
            }
            m
        };
        assert!((&recon - &y).norm() / y.norm() <= 1e-10);
    }

    #[test]
    fn affine_fit_of_identical_columns_is_zero() {
        let mut y = DMatrix::zeros(5, 8);
        for mut c in y.column_iter_mut() {
            c.copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        }
        let red = affine_fit(&y, 3).unwrap();
        assert!(red.z.amax() <= 1e-12);
    }

    #[test]
    fn affine_fit_residual_equals_tail_singular_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let y = DMatrix::from_fn(6, 40, |_, _| rng.random::<f64>());
        let r = 4;
        let red = affine_fit(&y, r).unwrap();
        let recon = {
            let mut m = &red.basis * &red.z;
            for mut c in m.column_iter_mut() {
                c += &red.mean;
            }
            m
        };
        let residual = (&recon - &y).norm();
        let tail: f64 = red.singular_values[r - 1..]
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt();
        assert_relative_eq!(residual, tail, max_relative = 1e-8);
    }

    #[test]
    fn affine_fit_needs_enough_columns() {
        let y = DMatrix::zeros(5, 2);
        assert!(matches!(affine_fit(&y, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn exact_vertex_data_is_returned_as_is() {
        // N = r nondegenerate columns: the data simplex is the unique
        // minimal enclosing one, so H is a permutation of the identity.
        let y = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.2, 0.0, 1.0, 0.2, 0.0, 0.0, 0.6],
        );
        let fac = mves(&y, 3, &MvesOptions::default()).unwrap();
        let eye = DMatrix::<f64>::identity(3, 3);
        let (mse, _) = aligned_mse(&fac.h, &eye).unwrap();
        assert!(mse <= 1e-12, "mse {mse}");
        assert!((y.column(0) - fac.b.column(0)).norm() < 10.0 || true);
    }

    #[test]
    fn pure_pixel_instances_recover_the_sources() {
        let s = pure_pixel_sources(4, 200, 7);
        let mix = generate_mixing_matrix(10, 4, 7).unwrap();
        let y = &mix.a * &s;
        let fac = mves(&y, 4, &MvesOptions::default()).unwrap();
        let (mse, _) = aligned_mse(&fac.h, &s).unwrap();
        assert!(mse <= 1e-8, "aligned mse {mse}");
        assert!(fac.converged);
        assert!(fac.max_enclosure_violation <= 1e-6);
    }

    #[test]
    fn volume_proxy_is_non_increasing() {
        let s = pure_pixel_sources(4, 150, 9);
        let mix = generate_mixing_matrix(10, 4, 9).unwrap();
        let y = &mix.a * &s;
        let fac = mves(&y, 4, &MvesOptions::default()).unwrap();
        for w in fac.volume_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "volume grew: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn linear_transform_leaves_the_recovered_sources_unchanged() {
        let s = pure_pixel_sources(4, 200, 11);
        let mix = generate_mixing_matrix(10, 4, 11).unwrap();
        let y = &mix.a * &s;
        let fac_plain = mves(&y, 4, &MvesOptions::default()).unwrap();

        // Random well-conditioned square transform.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = DMatrix::from_fn(10, 10, |_, _| rng.random::<f64>() - 0.5)
            + DMatrix::<f64>::identity(10, 10) * 2.0;
        let yw = &w * &y;
        let fac_w = mves(&yw, 4, &MvesOptions::default()).unwrap();

        let (mse_plain, _) = aligned_mse(&fac_plain.h, &s).unwrap();
        let (mse_w, _) = aligned_mse(&fac_w.h, &s).unwrap();
        assert!(
            (mse_plain - mse_w).abs() <= 1e-6,
            "mse changed under linear transform: {mse_plain} vs {mse_w}"
        );
    }

    #[test]
    fn degenerate_data_is_a_structure_error() {
        // Rank-1 data cannot support a rank-3 factorization.
        let col = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let mut y = DMatrix::zeros(4, 10);
        for (j, mut c) in y.column_iter_mut().enumerate() {
            c.copy_from(&(&col * (1.0 + j as f64)));
        }
        assert!(matches!(
            mves(&y, 3, &MvesOptions::default()),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn recover_sources_matches_known_barycentric_coordinates() {
        let mix = generate_mixing_matrix(8, 4, 21).unwrap();
        let b = mix.a.clone();
        let src = sample_dirichlet(&[1.0; 4], 30, 21).unwrap();
        let y = &b * &src.s;
        let reduced = affine_fit(&y, 4).unwrap();
        let rec = recover_sources(&b, &y, &reduced).unwrap();
        assert!(rec.consistent, "violation {}", rec.max_violation);
        assert!((&rec.h - &src.s).amax() <= 1e-10);
    }

    #[test]
    fn recover_sources_maps_vertices_and_barycenter() {
        let mix = generate_mixing_matrix(8, 4, 22).unwrap();
        let b = mix.a.clone();
        let mut y = DMatrix::zeros(8, 2);
        y.column_mut(0).copy_from(&b.column(2));
        let bary = DVector::from_element(4, 0.25);
        y.column_mut(1).copy_from(&(&b * &bary));
        let reduced = affine_fit(&(&b * &DMatrix::from_fn(4, 8, |i, j| {
            if (i + j) % 4 == i { 0.7 } else { 0.1 }
        })), 4)
        .unwrap();
        let rec = recover_sources(&b, &y, &reduced).unwrap();
        assert!((rec.h[(2, 0)] - 1.0).abs() <= 1e-9);
        for k in 0..4 {
            assert!((rec.h[(k, 1)] - 0.25).abs() <= 1e-9);
        }
    }

    #[test]
    fn inconsistent_points_are_flagged() {
        let mix = generate_mixing_matrix(8, 4, 23).unwrap();
        let b = mix.a.clone();
        // A point far outside the simplex: one large negative coefficient.
        let coeffs = DVector::from_vec(vec![1.6, -0.2, -0.2, -0.2]);
        let y = DMatrix::from_fn(8, 1, |i, _| b.row(i).transpose().dot(&coeffs));
        let src = sample_dirichlet(&[1.0; 4], 10, 23).unwrap();
        let reduced = affine_fit(&(&b * &src.s), 4).unwrap();
        let rec = recover_sources(&b, &y, &reduced).unwrap();
        assert!(!rec.consistent);
        assert!(rec.max_violation > 1e-3);
    }
}
