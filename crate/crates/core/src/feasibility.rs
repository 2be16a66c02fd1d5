//! Constructive feasibility certificates for the sum-to-one criterion.
//!
//! For a tall, full-rank, incoherent mixing matrix there is a fully dense
//! vector `d` with `A^T d = 1`. This module builds one: combine two vectors so
//! supports union (`dense_span_combination`), fold an orthonormal null-space
//! basis into a fully dense null vector (`dense_nullspace_vector`), then append
//! a row of ones and rescale (`balancing_vector`).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_incoherence, has_full_column_rank, INCOHERENCE_TOL, RANK_CUTOFF};

/// Relative density floor: an entry counts as nonzero when its magnitude is
/// at least this fraction of the largest.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Witness for `A^T d = 1_r` with every entry of `d` nonzero.
#[derive(Debug, Clone, Serialize)]
pub struct BalancingVector {
    pub d: Vec<f64>,
    /// Infinity norm of `A^T d - 1`.
    pub residual: f64,
    pub min_abs_entry: f64,
}

/// Combine `x` and `y` into `z = a x + b y` whose nonzero support is the
/// union of both supports, with `a = 1 / max_j |x_j|` and
/// `b = 2 / min_{j: y_j != 0} |y_j|`.
pub fn dense_span_combination(x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let x_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let y_min_nonzero = y
        .iter()
        .filter(|v| **v != 0.0)
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));

    if x_max == 0.0 && y_min_nonzero.is_infinite() {
        return Err(Error::Input("degenerate input: both vectors are zero".into()));
    }
    if y_min_nonzero.is_infinite() {
        // y = 0: nothing to merge.
        return Ok(x.clone());
    }
    if x_max == 0.0 {
        return Ok(y * (2.0 / y_min_nonzero));
    }

    let a = 1.0 / x_max;
    let b = 2.0 / y_min_nonzero;
    Ok(x * a + y * b)
}

/// Orthonormal basis of the null space of `A^T` (the orthogonal complement of
/// the range of `A`), via SVD with singular values cut at
/// [`RANK_CUTOFF`] relative to the largest.
fn left_nullspace_basis(a: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let (m, r) = (a.nrows(), a.ncols());
    // Pad to square so the SVD produces a complete set of left singular
    // vectors; the extra zero columns contribute zero singular values.
    let mut padded = DMatrix::zeros(m, m);
    padded.view_mut((0, 0), (m, r)).copy_from(a);
    let svd = padded.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not produce left singular vectors".into()))?;
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap()
    });
    let basis: Vec<DVector<f64>> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] <= RANK_CUTOFF * smax)
        .map(|i| u.column(i).into_owned())
        .collect();
    if basis.len() != m - r {
        return Err(Error::Numerical(format!(
            "null space dimension {} instead of {}",
            basis.len(),
            m - r
        )));
    }
    Ok(basis)
}

/// Fully dense `d` with `A^T d = 0`, built by folding an orthonormal
/// null-space basis pairwise with [`dense_span_combination`]. Requires a
/// tall, full-rank, incoherent matrix; incoherence is what rules out an
/// all-zero row in the basis.
pub fn dense_nullspace_vector(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (m, r) = (a.nrows(), a.ncols());
    if m <= r {
        return Err(Error::Structure(format!(
            "null space of A^T is trivial for {m}x{r}"
        )));
    }
    if !has_full_column_rank(a) {
        return Err(Error::Structure("matrix is rank deficient".into()));
    }
    if !check_incoherence(a, INCOHERENCE_TOL)? {
        return Err(Error::Precondition(
            "matrix is not incoherent; a dense null vector may not exist".into(),
        ));
    }

    let basis = left_nullspace_basis(a)?;
    let mut d = basis[0].clone();
    for u in &basis[1..] {
        d = dense_span_combination(&d, u)?;
    }
    let dmax = d.amax();
    d /= dmax;

    let min_abs = d.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min_abs < DENSITY_FLOOR {
        return Err(Error::Numerical(format!(
            "density not achieved: min |d_i| = {min_abs:.3e}"
        )));
    }
    Ok(d)
}

/// Construct a fully dense `d` with `A^T d = 1_r`: append a row of ones
/// (which preserves incoherence), take a dense null vector of the augmented
/// matrix, and rescale so the appended coordinate equals -1. A final
/// least-squares correction in the range of `A` removes accumulated rounding.
pub fn balancing_vector(mixing_a: &DMatrix<f64>) -> Result<BalancingVector> {
    let (m, r) = (mixing_a.nrows(), mixing_a.ncols());
    if m <= r {
        return Err(Error::Precondition(format!(
            "balancing vector requires a tall matrix, got {m}x{r}"
        )));
    }
    if !has_full_column_rank(mixing_a) {
        return Err(Error::Precondition("matrix is rank deficient".into()));
    }
    if !check_incoherence(mixing_a, INCOHERENCE_TOL)? {
        return Err(Error::Precondition("matrix is not incoherent".into()));
    }

    let mut augmented = DMatrix::zeros(m + 1, r);
    augmented.view_mut((0, 0), (m, r)).copy_from(mixing_a);
    augmented.row_mut(m).fill(1.0);

    let dense = dense_nullspace_vector(&augmented)?;
    let last = dense[m];
    let mut d = DVector::from_fn(m, |i, _| -dense[i] / last);

    // One refinement step: solve A^T A w = 1 - A^T d and correct by A w.
    // The correction lies in Range(A), so it cannot zero out an entry beyond
    // rounding level.
    let defect = DVector::from_element(r, 1.0) - mixing_a.transpose() * &d;
    let gram = mixing_a.transpose() * mixing_a;
    let w = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("refinement solve failed: Gram matrix not SPD".into()))?
        .solve(&defect);
    d += mixing_a * w;

    let residual = (mixing_a.transpose() * &d - DVector::from_element(r, 1.0)).amax();
    let min_abs_entry = d.iter().fold(f64::INFINITY, |mn, v| mn.min(v.abs()));
    Ok(BalancingVector {
        d: d.iter().cloned().collect(),
        residual,
        min_abs_entry,
    })
}
