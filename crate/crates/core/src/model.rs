//! Generative model: sources on the probability simplex, a nonnegative
//! mixing matrix, and an element-wise nonlinear distortion of the product.
//!
//! Also houses the structural checks used by the identification theory:
//! incoherence of the mixing matrix and a sufficient-condition heuristic for
//! the scattering of the sources.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinear::NonlinearSpec;

/// Entries smaller than this get a column resampled so every source stays
/// strictly inside the simplex.
pub const INTERIOR_FLOOR: f64 = 1e-12;

/// Default tolerance for the incoherence residual test.
pub const INCOHERENCE_TOL: f64 = 1e-8;

/// Relative singular-value cutoff used for rank decisions.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Source matrix with columns in the interior of the probability simplex.
#[derive(Debug, Clone)]
pub struct SourceMatrix {
    /// r x N, every column sums to one with strictly positive entries.
    pub s: DMatrix<f64>,
    /// Dirichlet concentration parameters used to draw the columns.
    pub dirichlet_mu: Vec<f64>,
    pub seed: u64,
}

/// How a mixing matrix was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingGeneration {
    AbsNormalNormalized,
    ScaledIdentity,
    UserSupplied,
}

/// Nonnegative mixing matrix, M x r.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    pub a: DMatrix<f64>,
    pub generation: MixingGeneration,
}

/// Ground truth attached to a synthetic dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub mixing: MixingMatrix,
    pub sources: SourceMatrix,
    pub phi: NonlinearSpec,
}

/// Observed data matrix, optionally with the truth that generated it.
#[derive(Debug, Clone)]
pub struct MixtureDataset {
    pub x: DMatrix<f64>,
    pub truth: Option<GroundTruth>,
}

/// Draw `n` source columns from a Dirichlet distribution with parameters `mu`.
///
/// Columns are normalized independent Gamma draws (shape `mu_k`, scale 1);
/// any column with an entry below [`INTERIOR_FLOOR`] is redrawn so the result
/// lies strictly inside the simplex. Deterministic given `seed`.
pub fn sample_dirichlet(mu: &[f64], n: usize, seed: u64) -> Result<SourceMatrix> {
    let r = mu.len();
    if r < 3 {
        return Err(Error::Dimension(format!(
            "need at least 3 latent dimensions, got {r}"
        )));
    }
    if n == 0 {
        return Err(Error::Parameter("need at least one sample".into()));
    }
    if let Some(bad) = mu.iter().find(|&&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::Parameter(format!(
            "Dirichlet parameters must be positive and finite, got {bad}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gammas: Vec<Gamma<f64>> = mu
        .iter()
        .map(|&m| Gamma::new(m, 1.0).map_err(|e| Error::Parameter(format!("gamma draw: {e}"))))
        .collect::<Result<_>>()?;

    let mut s = DMatrix::zeros(r, n);
    let mut col = vec![0.0; r];
    for j in 0..n {
        loop {
            let mut sum = 0.0;
            for (k, g) in gammas.iter().enumerate() {
                let v: f64 = g.sample(&mut rng);
                col[k] = v;
                sum += v;
            }
            if sum <= 0.0 || !sum.is_finite() {
                continue;
            }
            if col.iter().all(|&v| v / sum >= INTERIOR_FLOOR) {
                for k in 0..r {
                    s[(k, j)] = col[k] / sum;
                }
                break;
            }
        }
    }

    Ok(SourceMatrix {
        s,
        dirichlet_mu: mu.to_vec(),
        seed,
    })
}

/// Generate an M x r mixing matrix: absolute values of standard normal
/// entries, columns normalized to unit Euclidean norm. Deterministic given
/// `seed`; redraws in the (measure-zero) event of rank deficiency.
pub fn generate_mixing_matrix(m: usize, r: usize, seed: u64) -> Result<MixingMatrix> {
    if r < 3 {
        return Err(Error::Dimension(format!(
            "need at least 3 latent dimensions, got {r}"
        )));
    }
    if m < r {
        return Err(Error::Dimension(format!(
            "mixing matrix must be tall or square: M={m} < r={r}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    for _attempt in 0..16 {
        let mut a = DMatrix::from_fn(m, r, |_, _| {
            let v: f64 = normal.sample(&mut rng);
            v.abs()
        });
        for mut c in a.column_iter_mut() {
            let norm = c.norm();
            if norm > 0.0 {
                c /= norm;
            }
        }
        if has_full_column_rank(&a) {
            return Ok(MixingMatrix {
                a,
                generation: MixingGeneration::AbsNormalNormalized,
            });
        }
    }
    Err(Error::Numerical(
        "could not draw a full-column-rank mixing matrix".into(),
    ))
}

impl MixingMatrix {
    /// `scale * I_r`, used by the qualitative study where each feature sees a
    /// single scaled source.
    pub fn scaled_identity(r: usize, scale: f64) -> Self {
        MixingMatrix {
            a: DMatrix::identity(r, r) * scale,
            generation: MixingGeneration::ScaledIdentity,
        }
    }

    pub fn user_supplied(a: DMatrix<f64>) -> Self {
        MixingMatrix {
            a,
            generation: MixingGeneration::UserSupplied,
        }
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    /// True when at least two columns are strictly positive in every entry.
    pub fn has_two_positive_columns(&self) -> bool {
        self.a
            .column_iter()
            .filter(|c| c.iter().all(|&v| v > 0.0))
            .count()
            >= 2
    }

    pub fn is_nonnegative(&self) -> bool {
        self.a.iter().all(|&v| v >= 0.0)
    }
}

/// Smallest singular value strictly above `RANK_CUTOFF` times the largest.
pub fn has_full_column_rank(a: &DMatrix<f64>) -> bool {
    let svals = a.clone().singular_values();
    let max = svals.iter().cloned().fold(0.0, f64::max);
    let min = svals.iter().cloned().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > RANK_CUTOFF * max
}

/// Apply the generative model: X(i, j) = phi_i((A S)(i, j)).
///
/// Every entry of `A S` must lie in the domain of the nonlinearity assigned
/// to its row; violations name the offending feature.
pub fn apply_model(
    mixing: &MixingMatrix,
    sources: &SourceMatrix,
    phi: &NonlinearSpec,
) -> Result<MixtureDataset> {
    let (m, r) = (mixing.nrows(), mixing.ncols());
    if sources.s.nrows() != r {
        return Err(Error::Dimension(format!(
            "mixing has {r} columns but sources have {} rows",
            sources.s.nrows()
        )));
    }
    if phi.len() != m {
        return Err(Error::Dimension(format!(
            "{} nonlinearities assigned to {m} features",
            phi.len()
        )));
    }

    let linear = &mixing.a * &sources.s;
    let mut x = linear.clone();
    for i in 0..m {
        let kind = phi.kind(i);
        for j in 0..x.ncols() {
            x[(i, j)] = kind.eval_checked(linear[(i, j)], i)?;
        }
    }

    Ok(MixtureDataset {
        x,
        truth: Some(GroundTruth {
            mixing: mixing.clone(),
            sources: sources.clone(),
            phi: phi.clone(),
        }),
    })
}

/// Residuals of the least-squares problems min_y ||A y - e_j||_2, one per
/// coordinate vector e_j.
pub fn incoherence_residuals(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (m, r) = (a.nrows(), a.ncols());
    if m <= r {
        return Err(Error::Structure(format!(
            "incoherence is defined for tall matrices only: {m}x{r}"
        )));
    }
    if !has_full_column_rank(a) {
        return Err(Error::Structure("matrix is rank deficient".into()));
    }
    // The residual of projecting e_j onto Range(A) is sqrt(1 - ||Q.row(j)||^2)
    // for any orthonormal basis Q of the range.
    let q = a.clone().qr().q();
    let mut res = DVector::zeros(m);
    for j in 0..m {
        let row_norm_sq: f64 = q.row(j).iter().map(|v| v * v).sum();
        res[j] = (1.0 - row_norm_sq).max(0.0).sqrt();
    }
    Ok(res)
}

/// True iff no coordinate vector lies within `tol` of the range of `A`.
pub fn check_incoherence(a: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(incoherence_residuals(a)?.iter().all(|&r| r > tol))
}

/// Near-pure-column sufficient check for scattering: true if every latent
/// dimension k has some column with S(k, j) >= 1 - tol. A `false` result is
/// inconclusive, not a refutation.
pub fn ss_heuristic(s: &DMatrix<f64>, tol: f64) -> bool {
    (0..s.nrows()).all(|k| (0..s.ncols()).any(|j| s[(k, j)] >= 1.0 - tol))
}
