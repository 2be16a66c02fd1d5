//! Element-wise scalar nonlinearity library.
//!
//! Each kind is strictly monotone increasing and twice differentiable on its
//! declared domain, so it is invertible there. Kinds with a closed-form
//! inverse expose it; `XPlusTanh` does not have one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named element-wise scalar function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearKind {
    /// x
    Identity,
    /// sqrt(x) on [0, inf)
    Sqrt,
    /// x^(1/4) on [0, inf)
    FourthRoot,
    /// log(x + 1) on (-1, inf)
    Log1p,
    /// e^x
    Exp,
    /// x + x^2, increasing on (-1/2, inf)
    XPlusXSquared,
    /// log(e^x + 1)
    Softplus,
    /// x + tanh(x); no closed-form inverse
    XPlusTanh,
}

pub const ALL_KINDS: [NonlinearKind; 8] = [
    NonlinearKind::Identity,
    NonlinearKind::Sqrt,
    NonlinearKind::FourthRoot,
    NonlinearKind::Log1p,
    NonlinearKind::Exp,
    NonlinearKind::XPlusXSquared,
    NonlinearKind::Softplus,
    NonlinearKind::XPlusTanh,
];

impl NonlinearKind {
    /// Interval on which the function is strictly increasing and twice
    /// differentiable. Endpoints are open unless the function is defined and
    /// increasing there.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            NonlinearKind::Identity => (f64::NEG_INFINITY, f64::INFINITY),
            NonlinearKind::Sqrt => (0.0, f64::INFINITY),
            NonlinearKind::FourthRoot => (0.0, f64::INFINITY),
            NonlinearKind::Log1p => (-1.0, f64::INFINITY),
            NonlinearKind::Exp => (f64::NEG_INFINITY, f64::INFINITY),
            NonlinearKind::XPlusXSquared => (-0.5, f64::INFINITY),
            NonlinearKind::Softplus => (f64::NEG_INFINITY, f64::INFINITY),
            NonlinearKind::XPlusTanh => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// True when `x` lies in the domain of validity.
    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.domain();
        x.is_finite() && x >= lo && x <= hi
    }

    /// Evaluate the function at `x`. The caller is responsible for `x`
    /// being inside the domain; use [`NonlinearKind::eval_checked`] otherwise.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            NonlinearKind::Identity => x,
            NonlinearKind::Sqrt => x.sqrt(),
            NonlinearKind::FourthRoot => x.sqrt().sqrt(),
            NonlinearKind::Log1p => x.ln_1p(),
            NonlinearKind::Exp => x.exp(),
            NonlinearKind::XPlusXSquared => x + x * x,
            NonlinearKind::Softplus => {
                // log(e^x + 1) without overflow for large x
                if x > 30.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            NonlinearKind::XPlusTanh => x + x.tanh(),
        }
    }

    /// Evaluate with a domain check; `feature` only labels the error.
    pub fn eval_checked(&self, x: f64, feature: usize) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::Domain {
                feature,
                message: format!("{self:?} is not defined/increasing at {x}"),
            });
        }
        Ok(self.eval(x))
    }

    /// Closed-form inverse where one exists.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        match self {
            NonlinearKind::Identity => Some(y),
            NonlinearKind::Sqrt => Some(y * y),
            NonlinearKind::FourthRoot => Some(y.powi(4)),
            NonlinearKind::Log1p => Some(y.exp_m1()),
            NonlinearKind::Exp => Some(y.ln()),
            // increasing branch of x + x^2: x = (-1 + sqrt(1 + 4y)) / 2
            NonlinearKind::XPlusXSquared => Some((-1.0 + (1.0 + 4.0 * y).sqrt()) / 2.0),
            NonlinearKind::Softplus => Some(y.exp_m1().ln()),
            NonlinearKind::XPlusTanh => None,
        }
    }

    /// True when [`NonlinearKind::inverse`] returns a value.
    pub fn has_closed_form_inverse(&self) -> bool {
        !matches!(self, NonlinearKind::XPlusTanh)
    }

    /// Stable name matching the serialized form.
    pub fn name(&self) -> &'static str {
        match self {
            NonlinearKind::Identity => "identity",
            NonlinearKind::Sqrt => "sqrt",
            NonlinearKind::FourthRoot => "fourth-root",
            NonlinearKind::Log1p => "log1p",
            NonlinearKind::Exp => "exp",
            NonlinearKind::XPlusXSquared => "x-plus-x-squared",
            NonlinearKind::Softplus => "softplus",
            NonlinearKind::XPlusTanh => "x-plus-tanh",
        }
    }
}

impl std::fmt::Display for NonlinearKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for NonlinearKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_KINDS
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown nonlinearity {s:?}; known: {}",
                    ALL_KINDS.map(|k| k.name()).join(", ")
                ))
            })
    }
}

/// Per-feature assignment of nonlinearity kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonlinearSpec {
    pub kinds: Vec<NonlinearKind>,
}

impl NonlinearSpec {
    pub fn new(kinds: Vec<NonlinearKind>) -> Self {
        Self { kinds }
    }

    /// The same kind on every one of `m` features.
    pub fn uniform(kind: NonlinearKind, m: usize) -> Self {
        Self { kinds: vec![kind; m] }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, feature: usize) -> NonlinearKind {
        self.kinds[feature]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log1p_at_zero_is_zero() {
        assert_eq!(NonlinearKind::Log1p.eval(0.0), 0.0);
    }

    #[test]
    fn x_plus_x_squared_at_one_is_two() {
        assert_eq!(NonlinearKind::XPlusXSquared.eval(1.0), 2.0);
    }

    #[test]
    fn softplus_at_zero_is_log_two() {
        assert_relative_eq!(
            NonlinearKind::Softplus.eval(0.0),
            std::f64::consts::LN_2,
            max_relative = 1e-15
        );
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let err = NonlinearKind::Sqrt.eval_checked(-0.5, 3).unwrap_err();
        match err {
            crate::error::Error::Domain { feature, .. } => assert_eq!(feature, 3),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    /// Interior sample points for derivative / inverse sweeps.
    fn sample_points(kind: NonlinearKind, n: usize) -> Vec<f64> {
        let (lo, hi) = kind.domain();
        // Stay strictly inside and away from endpoints so central differences
        // with h = 1e-6 remain in-domain.
        let a = if lo.is_finite() { lo + 1e-3 } else { -3.0 };
        let b = if hi.is_finite() { hi - 1e-3 } else { 3.0 };
        (0..n)
            .map(|i| a + (b - a) * (i as f64 + 0.5) / n as f64)
            .collect()
    }

    #[test]
    fn central_difference_derivative_is_positive_everywhere() {
        let h = 1e-6;
        for kind in ALL_KINDS {
            for x in sample_points(kind, 1000) {
                let d = (kind.eval(x + h) - kind.eval(x - h)) / (2.0 * h);
                assert!(d > 0.0, "{kind:?} has nonpositive slope {d} at x={x}");
            }
        }
    }

    #[test]
    fn closed_form_inverses_round_trip() {
        for kind in ALL_KINDS {
            if !kind.has_closed_form_inverse() {
                continue;
            }
            for x in sample_points(kind, 100) {
                let y = kind.eval(x);
                let back = kind.inverse(y).unwrap();
                assert_relative_eq!(back, x, max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spec_serializes_with_kebab_names() {
        let spec = NonlinearSpec::new(vec![NonlinearKind::Log1p, NonlinearKind::XPlusXSquared]);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("log1p"));
        assert!(json.contains("x-plus-x-squared"));
        let back: NonlinearSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
