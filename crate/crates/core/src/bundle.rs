//! The three calibration samples in basis-evaluated form.

use serde::{Deserialize, Serialize};

use crate::error::{LrqrError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Labeled source (`S₁`: features + scores), unlabeled target (`S₂`) and
/// unlabeled source (`S₃`), each already mapped through the basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CalibrationBundle<T> {
    s1_phi: Matrix<T>,
    s1_scores: Vec<T>,
    s2_phi: Matrix<T>,
    s3_phi: Matrix<T>,
}

impl<T: Scalar> CalibrationBundle<T> {
    pub fn new(
        s1_phi: Matrix<T>,
        s1_scores: Vec<T>,
        s2_phi: Matrix<T>,
        s3_phi: Matrix<T>,
    ) -> Result<Self> {
        if s1_phi.nrows() == 0 {
            return Err(LrqrError::EmptySample("S1 (labeled source)"));
        }
        if s2_phi.nrows() == 0 {
            return Err(LrqrError::EmptySample("S2 (unlabeled target)"));
        }
        if s3_phi.nrows() == 0 {
            return Err(LrqrError::EmptySample("S3 (unlabeled source)"));
        }
        if s1_scores.len() != s1_phi.nrows() {
            return Err(LrqrError::ShapeMismatch {
                context: "S1 scores vs rows",
                expected: s1_phi.nrows(),
                got: s1_scores.len(),
            });
        }
        let d = s1_phi.ncols();
        for (ctx, m) in [("S2 basis columns", &s2_phi), ("S3 basis columns", &s3_phi)] {
            if m.ncols() != d {
                return Err(LrqrError::ShapeMismatch {
                    context: ctx,
                    expected: d,
                    got: m.ncols(),
                });
            }
        }
        if d == 0 {
            return Err(LrqrError::param("basis", "dimension must be at least 1"));
        }
        if !s1_scores.iter().all(|s| s.is_finite()) {
            return Err(LrqrError::NonFinite("S1 scores"));
        }
        if !(s1_phi.all_finite() && s2_phi.all_finite() && s3_phi.all_finite()) {
            return Err(LrqrError::NonFinite("basis features"));
        }
        Ok(Self {
            s1_phi,
            s1_scores,
            s2_phi,
            s3_phi,
        })
    }

    /// Additionally asserts every score lies in `[0, 1]`.
    pub fn new_bounded(
        s1_phi: Matrix<T>,
        s1_scores: Vec<T>,
        s2_phi: Matrix<T>,
        s3_phi: Matrix<T>,
    ) -> Result<Self> {
        if let Some(s) = s1_scores
            .iter()
            .find(|&&s| !(s >= T::zero() && s <= T::one()))
        {
            return Err(LrqrError::param(
                "s1_scores",
                format!("bounded-score mode requires values in [0,1], got {s}"),
            ));
        }
        Self::new(s1_phi, s1_scores, s2_phi, s3_phi)
    }

    pub fn dim(&self) -> usize {
        self.s1_phi.ncols()
    }

    pub fn n1(&self) -> usize {
        self.s1_phi.nrows()
    }

    pub fn n2(&self) -> usize {
        self.s2_phi.nrows()
    }

    pub fn n3(&self) -> usize {
        self.s3_phi.nrows()
    }

    pub fn s1_phi(&self) -> &Matrix<T> {
        &self.s1_phi
    }

    pub fn s1_scores(&self) -> &[T] {
        &self.s1_scores
    }

    pub fn s2_phi(&self) -> &Matrix<T> {
        &self.s2_phi
    }

    pub fn s3_phi(&self) -> &Matrix<T> {
        &self.s3_phi
    }

    /// Sub-bundle made of the given row indices of each sample.
    pub fn subset(&self, idx1: &[usize], idx2: &[usize], idx3: &[usize]) -> Result<Self> {
        Self::new(
            self.s1_phi.select_rows(idx1),
            idx1.iter().map(|&i| self.s1_scores[i]).collect(),
            self.s2_phi.select_rows(idx2),
            self.s3_phi.select_rows(idx3),
        )
    }

    /// Copy of the bundle with scores mapped through `scaler`.
    pub fn map_scores(&self, scaler: &ScoreScaler<T>) -> Self {
        Self {
            s1_scores: self.s1_scores.iter().map(|&s| scaler.apply(s)).collect(),
            ..self.clone()
        }
    }

    /// `Ê₂[Φ]` and `Ê₃[ΦΦᵀ]`, the only statistics of S₂ and S₃ the objective uses.
    pub fn moments(&self) -> Moments<T> {
        Moments {
            target_mean: self.s2_phi.column_means(),
            source_second: self.s3_phi.second_moment(),
        }
    }
}

/// Sufficient statistics of the unlabeled samples.
#[derive(Debug, Clone)]
pub struct Moments<T> {
    /// `Ê₂[Φ]`
    pub target_mean: Vec<T>,
    /// `Ê₃[ΦΦᵀ]`
    pub source_second: Matrix<T>,
}

impl<T: Scalar> Moments<T> {
    /// `Ê₂[h]`
    pub fn target_mean_h(&self, gamma: &[T]) -> T {
        crate::linalg::dot(&self.target_mean, gamma)
    }

    /// `Ê₃[h²] = γᵀ Σ̂ γ`
    pub fn source_mean_h2(&self, gamma: &[T]) -> T {
        let s = &self.source_second;
        let d = gamma.len();
        let mut acc = T::zero();
        for a in 0..d {
            let mut row = T::zero();
            for b in 0..d {
                row += s[(a, b)] * gamma[b];
            }
            acc += gamma[a] * row;
        }
        acc
    }

    /// `Σ̂ γ`
    pub fn source_second_times(&self, gamma: &[T]) -> Vec<T> {
        self.source_second.mul_vec(gamma)
    }
}

/// Monotone min-max map of scores onto `[0, 1]`, fitted on labeled source scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScoreScaler<T> {
    pub min: T,
    pub max: T,
}

impl<T: Scalar> ScoreScaler<T> {
    pub fn fit(scores: &[T]) -> Result<Self> {
        if scores.is_empty() {
            return Err(LrqrError::EmptySample("scores"));
        }
        let min = scores.iter().copied().fold(T::infinity(), T::min);
        let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
        Ok(Self { min, max })
    }

    pub fn apply(&self, s: T) -> T {
        let span = self.max - self.min;
        if span > T::zero() {
            (s - self.min) / span
        } else {
            s - self.min
        }
    }

    /// Maps a threshold on the normalized scale back to raw scores.
    pub fn invert(&self, t: T) -> T {
        let span = self.max - self.min;
        if span > T::zero() {
            t * span + self.min
        } else {
            t + self.min
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(n: usize) -> Matrix<f64> {
        Matrix::new(n, 1, vec![1.0; n]).unwrap()
    }

    #[test]
    fn rejects_empty_samples() {
        let e = Matrix::<f64>::zeros(0, 1);
        assert!(matches!(
            CalibrationBundle::new(e.clone(), vec![], ones(2), ones(2)),
            Err(LrqrError::EmptySample(_))
        ));
        assert!(CalibrationBundle::new(ones(2), vec![0.1, 0.2], e.clone(), ones(2)).is_err());
        assert!(CalibrationBundle::new(ones(2), vec![0.1, 0.2], ones(2), e).is_err());
    }

    #[test]
    fn rejects_shape_and_finiteness_violations() {
        assert!(CalibrationBundle::new(ones(2), vec![0.1], ones(2), ones(2)).is_err());
        let two = Matrix::new(2, 2, vec![1.0; 4]).unwrap();
        assert!(CalibrationBundle::new(ones(2), vec![0.1, 0.2], two, ones(2)).is_err());
        assert!(matches!(
            CalibrationBundle::new(ones(2), vec![0.1, f64::NAN], ones(2), ones(2)),
            Err(LrqrError::NonFinite(_))
        ));
    }

    #[test]
    fn bounded_mode_checks_range() {
        assert!(CalibrationBundle::new_bounded(ones(2), vec![0.0, 1.0], ones(1), ones(1)).is_ok());
        assert!(CalibrationBundle::new_bounded(ones(2), vec![0.0, 1.5], ones(1), ones(1)).is_err());
    }

    #[test]
    fn score_scaler_is_monotone_and_invertible() {
        let sc = ScoreScaler::fit(&[2.0, 4.0, 3.0]).unwrap();
        assert_eq!(sc.apply(2.0), 0.0);
        assert_eq!(sc.apply(4.0), 1.0);
        assert_eq!(sc.apply(3.0), 0.5);
        assert_eq!(sc.invert(0.5), 3.0);
    }
}
