//! Split and weighted conformal thresholds.

use crate::error::{LrqrError, Result};
use crate::loss::Alpha;
use crate::scalar::Scalar;

// Relative slack when comparing cumulative mass against 1 − α, so that
// rounding in sums such as 0.1 + … + 0.1 does not shift the rank by one.
const MASS_SLACK: f64 = 1e-9;

fn sorted_finite<T: Scalar>(scores: &[T], what: &'static str) -> Result<Vec<T>> {
    if scores.is_empty() {
        return Err(LrqrError::EmptySample(what));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(LrqrError::NonFinite(what));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(sorted)
}

/// 1-based rank `⌈(1−α)(n+1)⌉`.
pub fn split_rank<T: Scalar>(n: usize, alpha: Alpha<T>) -> usize {
    let target = alpha.level() * T::count(n + 1);
    let slack = T::lit(MASS_SLACK) * T::count(n + 1);
    (target - slack).ceil().to_usize().unwrap_or(usize::MAX).max(1)
}

/// The `⌈(1−α)(n+1)⌉`-th smallest score, or `+∞` when that rank exceeds `n`.
pub fn split_conformal_threshold<T: Scalar>(scores: &[T], alpha: Alpha<T>) -> Result<T> {
    let sorted = sorted_finite(scores, "calibration scores")?;
    let k = split_rank(sorted.len(), alpha);
    Ok(if k > sorted.len() { T::infinity() } else { sorted[k - 1] })
}

/// Calibration scores and weights prepared for repeated weighted-quantile
/// queries, one per test weight.
#[derive(Debug, Clone)]
pub struct WeightedQuantile<T> {
    /// Distinct sorted scores.
    values: Vec<T>,
    /// Cumulative calibration weight up to and including each value.
    cumulative: Vec<T>,
    total: T,
    /// Common weight when all calibration weights are equal.
    uniform: Option<T>,
    alpha: Alpha<T>,
    split: T,
}

impl<T: Scalar> WeightedQuantile<T> {
    /// Calibration weights must be positive and finite.
    pub fn new(scores: &[T], cal_weights: &[T], alpha: Alpha<T>) -> Result<Self> {
        if scores.len() != cal_weights.len() {
            return Err(LrqrError::ShapeMismatch {
                context: "calibration scores vs weights",
                expected: scores.len(),
                got: cal_weights.len(),
            });
        }
        if !cal_weights.iter().all(|&w| w > T::zero() && w.is_finite()) {
            return Err(LrqrError::param("weights", "calibration weights must be positive and finite"));
        }
        let split = split_conformal_threshold(scores, alpha)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));
        let mut values = Vec::new();
        let mut cumulative = Vec::new();
        let mut cum = T::zero();
        for &i in &order {
            cum += cal_weights[i];
            if values.last() == Some(&scores[i]) {
                *cumulative.last_mut().expect("non-empty") = cum;
            } else {
                values.push(scores[i]);
                cumulative.push(cum);
            }
        }
        let w0 = cal_weights[0];
        let uniform = cal_weights.iter().all(|&w| w == w0).then_some(w0);
        Ok(Self { values, cumulative, total: cum, uniform, alpha, split })
    }

    /// Threshold for a test point of weight `test_weight ≥ 0`.
    pub fn threshold(&self, test_weight: T) -> Result<T> {
        if !(test_weight >= T::zero()) || !test_weight.is_finite() {
            return Err(LrqrError::param("test_weight", "must be non-negative and finite"));
        }
        if self.uniform == Some(test_weight) {
            return Ok(self.split);
        }
        let total = self.total + test_weight;
        let need = self.alpha.level() * total - T::lit(MASS_SLACK) * total;
        let k = self.cumulative.partition_point(|&c| c < need);
        Ok(self.values.get(k).copied().unwrap_or_else(T::infinity))
    }
}

/// Weighted quantile with the test point's mass placed at `+∞`: the smallest
/// score `t` with `Σ_{sᵢ ≤ t} pᵢ ≥ 1 − α`, where
/// `pᵢ = wᵢ / (Σⱼ wⱼ + w_test)`. Returns `+∞` when no score qualifies.
/// Calibration weights must be positive; the test weight may be zero.
/// When every weight equals the test weight this is exactly the split threshold.
pub fn weighted_conformal_threshold<T: Scalar>(
    scores: &[T],
    cal_weights: &[T],
    test_weight: T,
    alpha: Alpha<T>,
) -> Result<T> {
    WeightedQuantile::new(scores, cal_weights, alpha)?.threshold(test_weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(v: f64) -> Alpha<f64> {
        Alpha::new(v).unwrap()
    }

    #[test]
    fn split_examples() {
        let s: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        assert_eq!(split_conformal_threshold(&s, a(0.1)).unwrap(), 1.0);
        assert_eq!(split_conformal_threshold(&[0.7], a(0.1)).unwrap(), f64::INFINITY);
        assert!(split_conformal_threshold::<f64>(&[], a(0.1)).is_err());
        assert!(split_conformal_threshold(&[f64::NAN], a(0.1)).is_err());
    }

    #[test]
    fn split_ranks() {
        assert_eq!(split_rank(99, a(0.1)), 90);
        assert_eq!(split_rank(9, a(0.1)), 9);
        assert_eq!(split_rank(1, a(0.5)), 1);
    }

    #[test]
    fn weighted_examples() {
        assert_eq!(weighted_conformal_threshold(&[0.3, 0.6], &[1.0, 3.0], 0.0, a(0.2)).unwrap(), 0.6);
        assert_eq!(
            weighted_conformal_threshold(&[0.3, 0.6], &[1.0, 1.0], 100.0, a(0.2)).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn weighted_errors() {
        assert!(weighted_conformal_threshold(&[0.3, 0.6], &[1.0], 1.0, a(0.2)).is_err());
        assert!(weighted_conformal_threshold(&[0.3], &[0.0], 1.0, a(0.2)).is_err());
        assert!(weighted_conformal_threshold(&[0.3], &[1.0], -1.0, a(0.2)).is_err());
        assert!(weighted_conformal_threshold(&[0.3], &[f64::INFINITY], 1.0, a(0.2)).is_err());
    }

    #[test]
    fn weighted_ties_take_all_tied_mass() {
        let t = weighted_conformal_threshold(&[0.5, 0.5, 0.9], &[1.0, 1.0, 2.0], 0.5, a(0.4)).unwrap();
        assert_eq!(t, 0.9);
        let t = weighted_conformal_threshold(&[0.5, 0.5, 0.9], &[2.0, 1.0, 1.0], 0.5, a(0.4)).unwrap();
        assert_eq!(t, 0.5);
    }

    proptest! {
        #[test]
        fn equal_weights_match_split(scores in prop::collection::vec(-5.0f64..5.0, 1..200),
                                     w in 1e-3f64..1e3, alpha in 0.01f64..0.5) {
            let al = a(alpha);
            let ws = vec![w; scores.len()];
            prop_assert_eq!(
                weighted_conformal_threshold(&scores, &ws, w, al).unwrap(),
                split_conformal_threshold(&scores, al).unwrap()
            );
        }

        #[test]
        fn nearly_equal_weights_match_split(scores in prop::collection::vec(-5.0f64..5.0, 1..200),
                                            alpha in 0.01f64..0.5) {
            // a different test weight disables the shortcut but keeps the same ranks
            let al = a(alpha);
            let n = scores.len();
            let ws = vec![1.0; n];
            let t = weighted_conformal_threshold(&scores, &ws, 1.0 + 1e-13, al).unwrap();
            prop_assert_eq!(t, split_conformal_threshold(&scores, al).unwrap());
        }

        #[test]
        fn thresholds_monotone_in_level(scores in prop::collection::vec(0.0f64..1.0, 1..100),
                                        weights in prop::collection::vec(0.1f64..10.0, 100),
                                        tw in 0.1f64..10.0,
                                        a1 in 0.01f64..0.5, a2 in 0.01f64..0.5) {
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            // smaller α means higher level, hence a larger threshold
            prop_assert!(split_conformal_threshold(&scores, a(lo)).unwrap()
                >= split_conformal_threshold(&scores, a(hi)).unwrap());
            let w = &weights[..scores.len()];
            prop_assert!(weighted_conformal_threshold(&scores, w, tw, a(lo)).unwrap()
                >= weighted_conformal_threshold(&scores, w, tw, a(hi)).unwrap());
        }

        #[test]
        fn prepared_matches_direct_scan(scores in prop::collection::vec(0.0f64..1.0, 1..60),
                                        weights in prop::collection::vec(0.1f64..10.0, 60),
                                        tw in 0.0f64..10.0, alpha in 0.01f64..0.5) {
            let w = &weights[..scores.len()];
            let got = weighted_conformal_threshold(&scores, w, tw, a(alpha)).unwrap();
            // reference: walk sorted scores, accumulating tied mass
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
            let total: f64 = w.iter().sum::<f64>() + tw;
            let need = (1.0 - alpha) * total - MASS_SLACK * total;
            let mut cum = 0.0;
            let mut want = f64::INFINITY;
            let mut k = 0;
            while k < idx.len() {
                let s = scores[idx[k]];
                while k < idx.len() && scores[idx[k]] == s { cum += w[idx[k]]; k += 1; }
                if cum >= need { want = s; break; }
            }
            prop_assert_eq!(got, want);
        }

        #[test]
        fn split_threshold_is_a_score_or_infinite(scores in prop::collection::vec(-1.0f64..1.0, 1..50),
                                                  alpha in 0.01f64..0.5) {
            let t = split_conformal_threshold(&scores, a(alpha)).unwrap();
            prop_assert!(t.is_infinite() || scores.contains(&t));
        }
    }
}
