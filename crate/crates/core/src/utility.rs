//! Separable network utilities `g(r) = Σ_n g_n(r_n)`.
//!
//! Every per-user term must be concave, continuous, nonnegative and
//! nondecreasing on `[0, 1]`. The built-in kinds satisfy this by
//! construction; generic evaluators are checked lazily by the admission
//! solver.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("utility weight for user {user} is {weight}; weights must be finite and >= 0")]
    InvalidWeight { user: usize, weight: f64 },

    #[error("utility needs at least one user")]
    Empty,
}

/// A user-supplied per-user utility evaluated on `[0, 1]`.
#[derive(Clone)]
pub struct GenericUtility {
    name: String,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl GenericUtility {
    pub fn new(name: impl Into<String>, eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), eval: Arc::new(eval) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.eval)(r)
    }
}

impl fmt::Debug for GenericUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericUtility").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum UtilityKind {
    /// `w·ln(1 + r)`, proportional fairness shifted to stay finite at zero.
    Log1p,
    /// `w·r`.
    Linear,
    Generic(GenericUtility),
}

/// Names the built-in kinds in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinUtility {
    Log1p,
    Linear,
}

#[derive(Debug, Clone)]
pub struct UserUtility {
    pub kind: UtilityKind,
    pub weight: f64,
}

impl UserUtility {
    pub fn value(&self, r: f64) -> f64 {
        match &self.kind {
            UtilityKind::Log1p => self.weight * r.ln_1p(),
            UtilityKind::Linear => self.weight * r,
            UtilityKind::Generic(g) => self.weight * g.eval(r),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match &self.kind {
            UtilityKind::Log1p => self.weight / (1.0 + r),
            UtilityKind::Linear => self.weight,
            UtilityKind::Generic(_) => {
                const H: f64 = 1e-6;
                let lo = (r - H).max(0.0);
                let hi = (r + H).min(1.0);
                (self.value(hi) - self.value(lo)) / (hi - lo)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct UtilityFunction {
    users: Vec<UserUtility>,
}

impl UtilityFunction {
    pub fn new(users: Vec<UserUtility>) -> Result<Self, UtilityError> {
        if users.is_empty() {
            return Err(UtilityError::Empty);
        }
        for (user, u) in users.iter().enumerate() {
            if !(u.weight.is_finite() && u.weight >= 0.0) {
                return Err(UtilityError::InvalidWeight { user, weight: u.weight });
            }
        }
        Ok(Self { users })
    }

    pub fn builtin(kind: BuiltinUtility, weights: &[f64]) -> Result<Self, UtilityError> {
        let kind = match kind {
            BuiltinUtility::Log1p => UtilityKind::Log1p,
            BuiltinUtility::Linear => UtilityKind::Linear,
        };
        Self::new(
            weights
                .iter()
                .map(|&weight| UserUtility { kind: kind.clone(), weight })
                .collect(),
        )
    }

    /// `Σ_n ln(1 + r_n)` over `n` users.
    pub fn sum_log1p(n: usize) -> Self {
        Self::builtin(BuiltinUtility::Log1p, &vec![1.0; n]).expect("unit weights are valid")
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn users(&self) -> &[UserUtility] {
        &self.users
    }

    pub fn user(&self, n: usize) -> &UserUtility {
        &self.users[n]
    }

    pub fn value(&self, r: &[f64]) -> f64 {
        self.users.iter().zip(r).map(|(u, &x)| u.value(x)).sum()
    }

    pub fn gradient(&self, r: &[f64]) -> Vec<f64> {
        self.users.iter().zip(r).map(|(u, &x)| u.derivative(x)).collect()
    }

    /// `G_max = g(1)`, the largest value `g` takes on `[0, 1]^N`.
    pub fn max_value(&self) -> f64 {
        self.users.iter().map(|u| u.value(1.0)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log1p_values() {
        let g = UtilityFunction::sum_log1p(2);
        assert!((g.value(&[4.0 / 13.0, 4.0 / 13.0]) - 2.0 * (17.0f64 / 13.0).ln()).abs() < 1e-15);
        assert_eq!(g.gradient(&[0.0, 1.0]), vec![1.0, 0.5]);
        assert!((g.max_value() - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn generic_derivative_is_numeric() {
        let u = UserUtility {
            kind: UtilityKind::Generic(GenericUtility::new("sqrt", f64::sqrt)),
            weight: 2.0,
        };
        assert!((u.derivative(0.25) - 2.0).abs() < 1e-6);
        // One-sided at the right end.
        assert!((u.derivative(1.0) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn invalid_weights_rejected() {
        assert_eq!(
            UtilityFunction::builtin(BuiltinUtility::Linear, &[1.0, -0.5]).unwrap_err(),
            UtilityError::InvalidWeight { user: 1, weight: -0.5 }
        );
        assert!(UtilityFunction::builtin(BuiltinUtility::Linear, &[f64::NAN]).is_err());
        assert_eq!(UtilityFunction::new(vec![]).unwrap_err(), UtilityError::Empty);
    }
}
