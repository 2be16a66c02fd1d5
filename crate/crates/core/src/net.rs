//! Constrained one-hidden-layer scalar function family.
//!
//! Each feature gets f(x) = sum_k alpha_k * tanh(beta_k * x + gamma_k) + delta_k
//! with alpha_k, beta_k > 0, which makes f strictly increasing (tanh' > 0), so
//! every member of the family is invertible. The residual of interest is
//! r_j = 1 - sum_i f_i(X(i, j)).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positivity floor for the alpha and beta parameters.
pub const POSITIVITY_FLOOR: f64 = 1e-6;

/// Parameters of one scalar function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Parameters for all features. When `shared` is true a single parameter set
/// is used for every feature and `features` holds one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    #[serde(rename = "K")]
    pub k: usize,
    pub shared: bool,
    pub features: Vec<FeatureParams>,
}

impl NetworkParams {
    /// Number of free parameters: 4K when shared, 4KM otherwise.
    pub fn param_count(&self) -> usize {
        4 * self.k * self.features.len()
    }

    fn feature(&self, i: usize) -> &FeatureParams {
        if self.shared {
            &self.features[0]
        } else {
            &self.features[i]
        }
    }

    /// Check the positivity invariants and per-feature vector lengths.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Parameter("need at least one neuron".into()));
        }
        if self.shared && self.features.len() != 1 {
            return Err(Error::Parameter(
                "shared parameters must hold exactly one feature entry".into(),
            ));
        }
        for (i, f) in self.features.iter().enumerate() {
            if f.alpha.len() != self.k
                || f.beta.len() != self.k
                || f.gamma.len() != self.k
                || f.delta.len() != self.k
            {
                return Err(Error::Dimension(format!(
                    "feature {i} does not have {} entries per parameter",
                    self.k
                )));
            }
            if f.alpha.iter().chain(f.beta.iter()).any(|&v| v < POSITIVITY_FLOOR) {
                return Err(Error::Parameter(format!(
                    "feature {i} violates the positivity floor {POSITIVITY_FLOOR}"
                )));
            }
        }
        Ok(())
    }

    /// Evaluate f_feature at `x`.
    pub fn forward(&self, x: f64, feature: usize) -> f64 {
        let p = self.feature(feature);
        let mut acc = 0.0;
        for k in 0..self.k {
            acc += p.alpha[k] * (p.beta[k] * x + p.gamma[k]).tanh() + p.delta[k];
        }
        acc
    }

    /// Apply the learned functions element-wise: Y(i, j) = f_i(X(i, j)).
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_feature_count(x.nrows())?;
        let mut y = x.clone();
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                y[(i, j)] = self.forward(x[(i, j)], i);
            }
        }
        Ok(y)
    }

    fn check_feature_count(&self, m: usize) -> Result<()> {
        if !self.shared && self.features.len() != m {
            return Err(Error::Dimension(format!(
                "{} feature parameter sets for {m} data rows",
                self.features.len()
            )));
        }
        Ok(())
    }

    /// Flatten into the solver's parameter vector. Blocks are per feature,
    /// each ordered alpha, beta, gamma, delta.
    pub fn pack(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for f in &self.features {
            v.extend_from_slice(&f.alpha);
            v.extend_from_slice(&f.beta);
            v.extend_from_slice(&f.gamma);
            v.extend_from_slice(&f.delta);
        }
        DVector::from_vec(v)
    }

    /// Inverse of [`NetworkParams::pack`].
    pub fn unpack(v: &DVector<f64>, k: usize, shared: bool, m: usize) -> Result<Self> {
        let blocks = if shared { 1 } else { m };
        if v.len() != 4 * k * blocks {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, expected {}",
                v.len(),
                4 * k * blocks
            )));
        }
        let mut features = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let at = |off: usize, idx: usize| v[b * 4 * k + off * k + idx];
            features.push(FeatureParams {
                alpha: (0..k).map(|i| at(0, i)).collect(),
                beta: (0..k).map(|i| at(1, i)).collect(),
                gamma: (0..k).map(|i| at(2, i)).collect(),
                delta: (0..k).map(|i| at(3, i)).collect(),
            });
        }
        Ok(NetworkParams { k, shared, features })
    }

    /// Box bounds matching the packing order: alpha and beta are bounded
    /// below by the positivity floor, gamma and delta are free.
    pub fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let p = self.param_count();
        let mut lower = DVector::from_element(p, f64::NEG_INFINITY);
        let upper = DVector::from_element(p, f64::INFINITY);
        let k = self.k;
        for b in 0..self.features.len() {
            for i in 0..2 * k {
                lower[b * 4 * k + i] = POSITIVITY_FLOOR;
            }
        }
        (lower, upper)
    }
}

/// Residuals r_j = 1 - sum_i f_i(X(i, j)), one per column.
pub fn sum_residual(params: &NetworkParams, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    params.check_feature_count(x.nrows())?;
    let (m, n) = x.shape();
    let mut r = DVector::from_element(n, 1.0);
    for j in 0..n {
        let mut acc = 0.0;
        for i in 0..m {
            acc += params.forward(x[(i, j)], i);
        }
        r[j] -= acc;
    }
    Ok(r)
}

/// Analytic Jacobian of the residuals with respect to the packed parameters,
/// N x P. Under shared parameters the per-feature contributions accumulate
/// into the same 4K columns.
pub fn jacobian(params: &NetworkParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(residual_and_jacobian(params, x)?.1)
}

/// One pass computing both the residual vector and its Jacobian.
pub fn residual_and_jacobian(
    params: &NetworkParams,
    x: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    params.check_feature_count(x.nrows())?;
    let (m, n) = x.shape();
    let k = params.k;
    let p = params.param_count();
    let mut r = DVector::from_element(n, 1.0);
    let mut jac = DMatrix::zeros(n, p);

    for j in 0..n {
        let mut acc = 0.0;
        for i in 0..m {
            let f = params.feature(i);
            let block = if params.shared { 0 } else { i } * 4 * k;
            let xij = x[(i, j)];
            for q in 0..k {
                let t = (f.beta[q] * xij + f.gamma[q]).tanh();
                let sech2 = 1.0 - t * t;
                acc += f.alpha[q] * t + f.delta[q];
                jac[(j, block + q)] += -t;
                jac[(j, block + k + q)] += -f.alpha[q] * xij * sech2;
                jac[(j, block + 2 * k + q)] += -f.alpha[q] * sech2;
                jac[(j, block + 3 * k + q)] += -1.0;
            }
        }
        r[j] -= acc;
    }
    Ok((r, jac))
}
