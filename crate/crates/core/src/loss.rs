//! Pinball (quantile) loss at level `1 - alpha` and its subgradient.

use serde::{Deserialize, Serialize};

use crate::error::{LrqrError, Result};
use crate::scalar::Scalar;

/// Miscoverage level, restricted to `(0, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64", bound = "T: Scalar")]
pub struct Alpha<T>(T);

impl<T: Scalar> Alpha<T> {
    pub fn new(value: T) -> Result<Self> {
        if value > T::zero() && value <= T::lit(0.5) {
            Ok(Self(value))
        } else {
            Err(LrqrError::InvalidAlpha(value.to_f64_lossy()))
        }
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }

    /// Target coverage `1 - alpha`.
    #[inline]
    pub fn level(self) -> T {
        T::one() - self.0
    }
}

impl<T: Scalar> TryFrom<f64> for Alpha<T> {
    type Error = LrqrError;
    fn try_from(v: f64) -> Result<Self> {
        Alpha::new(T::lit(v))
    }
}

impl<T: Scalar> From<Alpha<T>> for f64 {
    fn from(a: Alpha<T>) -> f64 {
        a.0.to_f64_lossy()
    }
}

/// `(1-α)(s-c)` when `s >= c`, else `α(c-s)`.
#[inline]
pub fn pinball<T: Scalar>(c: T, s: T, alpha: Alpha<T>) -> T {
    if s >= c {
        alpha.level() * (s - c)
    } else {
        alpha.value() * (c - s)
    }
}

/// Subgradient of [`pinball`] in `c`: `1[s <= c] - (1-α)`.
///
/// The indicator is closed, so a tie `s == c` returns `α`.
#[inline]
pub fn pinball_subgrad<T: Scalar>(c: T, s: T, alpha: Alpha<T>) -> T {
    if s <= c {
        alpha.value()
    } else {
        -alpha.level()
    }
}

/// Mean pinball loss of a constant threshold over a sample.
pub fn mean_pinball<T: Scalar>(c: T, scores: &[T], alpha: Alpha<T>) -> T {
    let n = T::count(scores.len().max(1));
    scores.iter().map(|&s| pinball(c, s, alpha)).sum::<T>() / n
}
